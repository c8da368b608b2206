pub mod completion;
pub mod hindsight;
pub mod kernel;
pub mod model;
pub mod parser;
pub mod proofenv;
pub mod search;

pub use kernel::{Term, Theory, TypingContext};

/// Scalar used by the shipped binaries and tests.
pub type DefaultScalar = f32;
