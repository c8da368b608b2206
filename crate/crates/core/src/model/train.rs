//! Supervised training on (prompt, completion) examples: AdamW over
//! mean masked cross-entropy, dynamically sized batches, deterministic
//! shuffling and chunked-parallel gradient accumulation so repeated runs
//! produce bit-identical weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tensor::{s, Scalar};
use super::transformer::{ParamSet, TransformerModel};
use crate::search::TrainingExample;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Upper bound on the number of characters per batch; sequences are
    /// added while the running total stays within it (a single sequence
    /// longer than the bound still forms its own batch).
    pub batch_chars: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 1e-4,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_chars: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub examples: usize,
    pub skipped: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// One tokenized training sequence: prompt + completion + terminator, with
/// loss masked to the completion and terminator characters.
struct Seq {
    tokens: Vec<usize>,
    prompt_len: usize,
}

impl Seq {
    fn masked(&self) -> usize {
        self.tokens.len() - self.prompt_len
    }
}

/// Tokenizes and length-limits examples. Sequences longer than the model
/// context keep the completion and as much of the prompt's tail as fits;
/// an example whose completion alone overflows is dropped.
fn prepare<S: Scalar>(
    model: &TransformerModel<S>,
    examples: &[TrainingExample],
) -> (Vec<Seq>, usize) {
    let max_len = model.cfg.max_len;
    let mut seqs = Vec::new();
    let mut skipped = 0usize;
    for ex in examples {
        let full = format!("{}{}\n", ex.prompt, ex.completion);
        let tokens = TransformerModel::<S>::encode(&full);
        let mut prompt_len = ex.prompt.chars().count();
        let mut tokens = tokens;
        if tokens.len() > max_len {
            let cut = tokens.len() - max_len;
            if cut >= prompt_len {
                skipped += 1;
                continue;
            }
            tokens.drain(..cut);
            prompt_len -= cut;
        }
        if tokens.len() < 2 || prompt_len == 0 {
            skipped += 1;
            continue;
        }
        seqs.push(Seq { tokens, prompt_len });
    }
    (seqs, skipped)
}

struct AdamW<S> {
    m: ParamSet<S>,
    v: ParamSet<S>,
    t: usize,
}

impl<S: Scalar> AdamW<S> {
    fn new(model: &TransformerModel<S>) -> AdamW<S> {
        AdamW { m: ParamSet::zeros(&model.cfg), v: ParamSet::zeros(&model.cfg), t: 0 }
    }

    fn step(&mut self, params: &mut ParamSet<S>, grads: &ParamSet<S>, cfg: &TrainConfig) {
        self.t += 1;
        let b1 = s::<S>(cfg.beta1);
        let b2 = s::<S>(cfg.beta2);
        let eps = s::<S>(cfg.eps);
        let lr = s::<S>(cfg.lr);
        let wd = s::<S>(cfg.weight_decay);
        let bc1 = s::<S>(1.0 - cfg.beta1.powi(self.t as i32));
        let bc2 = s::<S>(1.0 - cfg.beta2.powi(self.t as i32));
        let one = S::one();
        let mut ps = params.tensors_mut();
        let gs = grads.tensors();
        let mut ms = self.m.tensors_mut();
        let mut vs = self.v.tensors_mut();
        for i in 0..ps.len() {
            let p = &mut ps[i];
            let g = gs[i];
            let m = &mut ms[i];
            let v = &mut vs[i];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - lr * (mhat / (vhat.sqrt() + eps) + wd * p[j]);
            }
        }
    }
}

/// Runs AdamW for `cfg.steps` steps and returns the loss trajectory
/// endpoints. Batches cycle through a shuffled order, reshuffling each
/// time the pool is exhausted; everything is seeded, so training is
/// reproducible run to run.
pub fn train<S: Scalar>(
    model: &mut TransformerModel<S>,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
) -> TrainReport {
    let (seqs, skipped) = prepare(model, examples);
    if seqs.is_empty() || cfg.steps == 0 {
        return TrainReport {
            steps: 0,
            examples: 0,
            skipped,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut opt = AdamW::new(model);
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        let mut batch: Vec<usize> = Vec::new();
        let mut chars = 0usize;
        loop {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = order[cursor];
            // Keep batches at or below the character budget; an oversized
            // sequence trains alone. Never repeat a sequence within one
            // batch on tiny corpora.
            if !batch.is_empty() && chars + seqs[idx].tokens.len() > cfg.batch_chars {
                break;
            }
            cursor += 1;
            chars += seqs[idx].tokens.len();
            batch.push(idx);
            if batch.len() >= seqs.len() {
                break;
            }
        }
        let total_masked: usize = batch.iter().map(|&i| seqs[i].masked()).sum();
        let scale = s::<S>(1.0 / total_masked as f64);
        // Fixed chunking keeps float accumulation order independent of
        // thread scheduling.
        let chunk = batch.len().div_ceil(16).max(1);
        let partials: Vec<(ParamSet<S>, f64)> = batch
            .par_chunks(chunk)
            .map(|ids| {
                let mut grads = ParamSet::zeros(&model.cfg);
                let mut loss = 0.0f64;
                for &i in ids {
                    let sq = &seqs[i];
                    loss += model.loss_and_grad(&sq.tokens, sq.prompt_len, &mut grads, scale);
                }
                (grads, loss)
            })
            .collect();
        let mut grads = ParamSet::zeros(&model.cfg);
        let mut loss_sum = 0.0f64;
        for (g, l) in &partials {
            grads.add_assign(g);
            loss_sum += l;
        }
        let mean_loss = loss_sum / total_masked as f64;
        if step == 0 {
            initial_loss = mean_loss;
        }
        final_loss = mean_loss;
        opt.step(&mut model.params, &grads, cfg);
    }
    TrainReport { steps: cfg.steps, examples: seqs.len(), skipped, initial_loss, final_loss }
}
