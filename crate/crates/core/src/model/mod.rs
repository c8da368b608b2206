//! Character-level sequence models: the interface consumed by search and
//! generation, a uniform baseline, and (in submodules) a trainable
//! transformer implementation.

pub mod checkpoint;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use checkpoint::{load as load_checkpoint, save as save_checkpoint, CheckpointError};
pub use train::{train, TrainConfig, TrainReport};
pub use transformer::{TransformerConfig, TransformerModel, TransformerSession};

/// Character vocabulary size: 7-bit ASCII plus a catch-all final slot.
pub const VOCAB: usize = 128;

/// End-of-sequence character.
pub const EOT: char = '\n';

/// A character-level autoregressive model over the 128-entry vocabulary.
pub trait SequenceModel: Send + Sync {
    /// Natural-log probabilities for the next character after `text`.
    /// Returns exactly `VOCAB` entries summing (in probability space) to 1.
    fn next_char_logprobs(&self, text: &str) -> Vec<f64>;

    /// Log-likelihood of `continuation` following `prompt`, by the chain
    /// rule over characters. No length normalization.
    fn sequence_loglik(&self, prompt: &str, continuation: &str) -> f64 {
        let mut text = prompt.to_string();
        let mut total = 0.0;
        for ch in continuation.chars() {
            let lp = self.next_char_logprobs(&text);
            let idx = (ch as usize).min(VOCAB - 1);
            total += lp[idx];
            text.push(ch);
        }
        total
    }

    /// Probability distribution over `candidates` as continuations of
    /// `prompt`: each candidate's sequence log-likelihood, renormalized
    /// over the set.
    fn score_continuations(&self, prompt: &str, candidates: &[String]) -> Vec<f64> {
        let logliks: Vec<f64> = candidates
            .iter()
            .map(|c| self.sequence_loglik(prompt, c))
            .collect();
        renormalize(&logliks)
    }

    /// Starts an incremental scoring session seeded with `prompt`. The
    /// default recomputes from the full text on each query; implementations
    /// with internal caches can do better.
    fn start_session(&self, prompt: &str) -> Box<dyn ScoringSession + '_> {
        Box::new(TextSession { model: self, text: prompt.to_string() })
    }
}

/// Incremental next-character scoring over a growing text.
pub trait ScoringSession {
    fn append(&mut self, text: &str);
    fn next_char_logprobs(&self) -> Vec<f64>;
    fn text(&self) -> &str;
}

/// Fallback session that re-queries the model with the accumulated text.
pub struct TextSession<'a, M: SequenceModel + ?Sized> {
    model: &'a M,
    text: String,
}

impl<'a, M: SequenceModel + ?Sized> TextSession<'a, M> {
    pub fn new(model: &'a M, prompt: &str) -> Self {
        TextSession { model, text: prompt.to_string() }
    }
}

impl<'a, M: SequenceModel + ?Sized> ScoringSession for TextSession<'a, M> {
    fn append(&mut self, text: &str) {
        self.text.push_str(text);
    }

    fn next_char_logprobs(&self) -> Vec<f64> {
        self.model.next_char_logprobs(&self.text)
    }

    fn text(&self) -> &str {
        &self.text
    }
}

/// Softmax over log-weights. A degenerate input (all minus infinity or any
/// NaN) yields the uniform distribution.
pub fn renormalize(logliks: &[f64]) -> Vec<f64> {
    if logliks.is_empty() {
        return Vec::new();
    }
    let max = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || logliks.iter().any(|x| x.is_nan()) {
        return vec![1.0 / logliks.len() as f64; logliks.len()];
    }
    let exps: Vec<f64> = logliks.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Uninformed model: uniform over the character vocabulary, and exactly
/// uniform over any candidate set (so search under it is uniform-policy).
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformModel;

impl SequenceModel for UniformModel {
    fn next_char_logprobs(&self, _text: &str) -> Vec<f64> {
        vec![-(VOCAB as f64).ln(); VOCAB]
    }

    fn score_continuations(&self, _prompt: &str, candidates: &[String]) -> Vec<f64> {
        if candidates.is_empty() {
            return Vec::new();
        }
        vec![1.0 / candidates.len() as f64; candidates.len()]
    }
}
