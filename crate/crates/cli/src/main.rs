fn main() {
    println!("axiomata");
}
