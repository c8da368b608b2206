//! Temporary sampler-rejection diagnostics.

use std::sync::{Arc, Mutex};

use axiomata::completion::{sample_term_with, Rejection, SamplerConfig};
use axiomata::model::{ScoringSession, SequenceModel, TextSession, UniformModel};
use axiomata::parser::parse_theory;
use axiomata::{Term, TypingContext};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Records every appended character so failures can show their prefix.
struct RecModel {
    buf: Arc<Mutex<String>>,
}

struct RecSession<'a> {
    inner: TextSession<'a, UniformModel>,
    buf: Arc<Mutex<String>>,
}

impl<'a> ScoringSession for RecSession<'a> {
    fn append(&mut self, text: &str) {
        self.buf.lock().unwrap().push_str(text);
        self.inner.append(text);
    }
    fn next_char_logprobs(&self) -> Vec<f64> {
        self.inner.next_char_logprobs()
    }
    fn text(&self) -> &str {
        self.inner.text()
    }
}

impl SequenceModel for RecModel {
    fn next_char_logprobs(&self, _text: &str) -> Vec<f64> {
        vec![-(128.0f64).ln(); 128]
    }
    fn start_session(&self, prompt: &str) -> Box<dyn ScoringSession + '_> {
        self.buf.lock().unwrap().clear();
        Box::new(RecSession {
            inner: TextSession::new(&UniformModel, prompt),
            buf: self.buf.clone(),
        })
    }
}

fn main() {
    if std::env::args().nth(1).as_deref() == Some("xfmr") {
        return transformer_pass();
    }
    if std::env::args().nth(1).as_deref() == Some("hindsight") {
        return hindsight_pass();
    }
    if std::env::args().nth(1).as_deref() == Some("probe") {
        return script_probe();
    }
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    for name in ["arith", "prop_logic", "groups"] {
        let src = std::fs::read_to_string(format!("theories/{name}.p")).unwrap();
        let theory = parse_theory(&src).unwrap();
        let ctx = TypingContext::new(&theory);
        let buf = Arc::new(Mutex::new(String::new()));
        let model = RecModel { buf: buf.clone() };
        let mut ok = 0usize;
        let mut dead = 0usize;
        let mut budget = 0usize;
        let mut dead_samples: Vec<String> = Vec::new();
        let mut budget_samples: Vec<String> = Vec::new();
        let mut len_sum = 0usize;
        let mut max_len = 0usize;
        let cfg = SamplerConfig::default();
        for seed in 0..n as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = cfg.clone();
            c.seed = seed;
            match sample_term_with(
                &model as &dyn SequenceModel,
                &Term::prop(),
                &ctx,
                &c,
                &mut rng,
                "CONJ[hard]:",
            ) {
                Ok((text, _)) => {
                    ok += 1;
                    len_sum += text.chars().count();
                    max_len = max_len.max(text.chars().count());
                }
                Err(Rejection::DeadEnd) => {
                    dead += 1;
                    if dead_samples.len() < 10 {
                        dead_samples.push(buf.lock().unwrap().clone());
                    }
                }
                Err(Rejection::TokenBudget) => {
                    budget += 1;
                    if budget_samples.len() < 3 {
                        budget_samples.push(buf.lock().unwrap().clone());
                    }
                }
            }
        }
        println!(
            "{name}: ok {ok} dead {dead} budget {budget}  reject {:.1}%  mean len {:.0} max {max_len}",
            100.0 * (dead + budget) as f64 / n as f64,
            if ok > 0 { len_sum as f64 / ok as f64 } else { 0.0 },
        );
        for s in &dead_samples {
            println!("  DEAD:   {s}");
        }
        for s in &budget_samples {
            println!("  BUDGET: {s}");
        }
    }
}

#[allow(dead_code)]
fn transformer_pass() {
    use axiomata::model::{TransformerConfig, TransformerModel};
    let n: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let model: TransformerModel<f32> = TransformerModel::new(TransformerConfig::default(), 7);
    for name in ["arith", "prop_logic", "groups"] {
        let src = std::fs::read_to_string(format!("theories/{name}.p")).unwrap();
        let theory = parse_theory(&src).unwrap();
        let ctx = TypingContext::new(&theory);
        let cfg = SamplerConfig::default();
        let (mut ok, mut dead, mut budget) = (0usize, 0usize, 0usize);
        let t0 = std::time::Instant::now();
        for seed in 0..n as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = cfg.clone();
            c.seed = seed;
            match sample_term_with(
                &model as &dyn SequenceModel,
                &Term::prop(),
                &ctx,
                &c,
                &mut rng,
                "CONJ[hard]:",
            ) {
                Ok(_) => ok += 1,
                Err(Rejection::DeadEnd) => dead += 1,
                Err(Rejection::TokenBudget) => budget += 1,
            }
        }
        println!(
            "XFMR {name}: ok {ok} dead {dead} budget {budget}  reject {:.1}%  ({:.1}s)",
            100.0 * (dead + budget) as f64 / n as f64,
            t0.elapsed().as_secs_f64(),
        );
    }
}

fn hindsight_pass() {
    use axiomata::hindsight::{fact_examples, prune_script, relabel_tree, GoalRegistry};
    use axiomata::parser::parse_term_in;
    use axiomata::proofenv::check_script;
    use axiomata::search::{prove, SearchConfig};
    use std::time::Instant;

    let src = std::fs::read_to_string("theories/arith.p").unwrap();
    let theory = parse_theory(&src).unwrap();
    let ctx = TypingContext::new(&theory);
    let model = UniformModel;
    let mut registry = GoalRegistry::new();

    let conjectures = [
        "(= nat (+ (s (s z)) (s z)) z)",
        "[(x : nat) -> (= nat x (s x))]",
        "[(x : nat) -> (= nat (+ x z) z)]",
    ];
    for text in conjectures {
        let stmt = parse_term_in(text, &ctx).unwrap();
        let t0 = Instant::now();
        let out = prove(&theory, &stmt, &model, &SearchConfig { budget: 400, exploration: 1.0, seed: 0 }).unwrap();
        let t1 = Instant::now();
        let before = registry.len();
        let facts = relabel_tree(&theory, &out.tree, &mut registry, &model);
        println!(
            "CONJ {text}: solved={} nodes={} facts={} (registry {} -> {}) search {:?} relabel {:?}",
            out.solved, out.tree.len(), facts.len(), before, registry.len(), t1 - t0, t1.elapsed()
        );
        for f in facts.iter().take(8) {
            assert!(check_script(&theory, &f.script), "emitted fact fails check: {}", f.statement);
            assert!(f.loglik <= 0.0);
            let ex = fact_examples(&theory, &f).unwrap();
            println!("  FACT {}  (loglik {:.3}, {} rows)", f.statement, f.loglik, ex.len());
        }
        if facts.len() > 8 {
            println!("  ... and {} more", facts.len() - 8);
        }
    }

    // The 2+1=3 narrative fact should be rediscoverable from the first tree.
    let want = parse_term_in("(= nat (+ (s (s z)) (s z)) (s (s (s z))))", &ctx).unwrap();
    println!("registry has 2+1=3: {}", registry.contains(&want));

    // prune_script drop-unused fixture.
    let script_src = "theorem t : [(x : nat) -> (= nat x x)] {\n  intro x : nat.\n  show (= nat z z) by eq_refl.\n  show (= nat x x) by eq_refl.\n}";
    let script = axiomata::proofenv::parse_proof_script(script_src).unwrap();
    let goal = script.statement.clone();
    let pruned = prune_script(&theory, &script, &goal).unwrap();
    println!("prune: {} -> {} steps", script.steps.len(), pruned.steps.len());
    assert!(check_script(&theory, &pruned));
}

fn script_probe() {
    use axiomata::hindsight::{relabel_tree, GoalRegistry};
    use axiomata::parser::parse_term_in;
    use axiomata::search::{prove, SearchConfig};

    let src = std::fs::read_to_string("theories/arith.p").unwrap();
    let theory = parse_theory(&src).unwrap();
    let ctx = TypingContext::new(&theory);
    let model = UniformModel;
    let mut registry = GoalRegistry::new();
    let stmt = parse_term_in("[(x : nat) -> (= nat x (s x))]", &ctx).unwrap();
    let out = prove(&theory, &stmt, &model, &SearchConfig { budget: 400, exploration: 1.0, seed: 0 }).unwrap();
    let facts = relabel_tree(&theory, &out.tree, &mut registry, &model);
    for f in &facts {
        println!("=== {}", f.statement);
        println!("{}", f.script.render());
    }
}
