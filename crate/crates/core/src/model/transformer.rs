//! A small decoder-only transformer over the character vocabulary, written
//! directly against the tensor layer: pre-norm blocks with causal
//! multi-head attention and a GELU feed-forward, learned absolute
//! positions, and an untied output head. Training uses handwritten
//! backpropagation; scoring uses an incremental key/value cache.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{s, Mat, Scalar};
use super::{renormalize, ScoringSession, SequenceModel, VOCAB};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig { d_model: 64, n_heads: 4, n_layers: 2, d_ff: 256, max_len: 384 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub ln1_g: Vec<S>,
    pub ln1_b: Vec<S>,
    pub wq: Mat<S>,
    pub bq: Vec<S>,
    pub wk: Mat<S>,
    pub bk: Vec<S>,
    pub wv: Mat<S>,
    pub bv: Vec<S>,
    pub wo: Mat<S>,
    pub bo: Vec<S>,
    pub ln2_g: Vec<S>,
    pub ln2_b: Vec<S>,
    pub w1: Mat<S>,
    pub b1: Vec<S>,
    pub w2: Mat<S>,
    pub b2: Vec<S>,
}

/// The full parameter set, also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S> {
    pub wte: Mat<S>,
    pub wpe: Mat<S>,
    pub layers: Vec<LayerParams<S>>,
    pub lnf_g: Vec<S>,
    pub lnf_b: Vec<S>,
    pub head: Mat<S>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn zeros(cfg: &TransformerConfig) -> ParamSet<S> {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let layer = || LayerParams {
            ln1_g: vec![S::zero(); d],
            ln1_b: vec![S::zero(); d],
            wq: Mat::zeros(d, d),
            bq: vec![S::zero(); d],
            wk: Mat::zeros(d, d),
            bk: vec![S::zero(); d],
            wv: Mat::zeros(d, d),
            bv: vec![S::zero(); d],
            wo: Mat::zeros(d, d),
            bo: vec![S::zero(); d],
            ln2_g: vec![S::zero(); d],
            ln2_b: vec![S::zero(); d],
            w1: Mat::zeros(d, f),
            b1: vec![S::zero(); f],
            w2: Mat::zeros(f, d),
            b2: vec![S::zero(); d],
        };
        ParamSet {
            wte: Mat::zeros(VOCAB, d),
            wpe: Mat::zeros(cfg.max_len, d),
            layers: (0..cfg.n_layers).map(|_| layer()).collect(),
            lnf_g: vec![S::zero(); d],
            lnf_b: vec![S::zero(); d],
            head: Mat::zeros(d, VOCAB),
        }
    }

    /// All tensors in a fixed traversal order.
    pub fn tensors(&self) -> Vec<&Vec<S>> {
        let mut v: Vec<&Vec<S>> = vec![&self.wte.data, &self.wpe.data];
        for l in &self.layers {
            v.extend([
                &l.ln1_g, &l.ln1_b, &l.wq.data, &l.bq, &l.wk.data, &l.bk, &l.wv.data, &l.bv,
                &l.wo.data, &l.bo, &l.ln2_g, &l.ln2_b, &l.w1.data, &l.b1, &l.w2.data, &l.b2,
            ]);
        }
        v.extend([&self.lnf_g, &self.lnf_b, &self.head.data]);
        v
    }

    /// All tensors, mutably, in the same order as [`tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut v: Vec<&mut Vec<S>> = vec![&mut self.wte.data, &mut self.wpe.data];
        for l in &mut self.layers {
            v.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.wq.data,
                &mut l.bq,
                &mut l.wk.data,
                &mut l.bk,
                &mut l.wv.data,
                &mut l.bv,
                &mut l.wo.data,
                &mut l.bo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w1.data,
                &mut l.b1,
                &mut l.w2.data,
                &mut l.b2,
            ]);
        }
        v.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.head.data]);
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// self += other, tensorwise.
    pub fn add_assign(&mut self, other: &ParamSet<S>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += *y;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerModel<S> {
    pub cfg: TransformerConfig,
    pub params: ParamSet<S>,
}

/// Standard normal via Box-Muller, driven by the given generator.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl<S: Scalar> TransformerModel<S> {
    /// Fresh model: weights from N(0, 0.02), biases zero, norm gains one.
    pub fn new(cfg: TransformerConfig, seed: u64) -> TransformerModel<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros(&cfg);
        let init_mat = |m: &mut Mat<S>, rng: &mut ChaCha8Rng| {
            for x in m.data.iter_mut() {
                *x = s(normal(rng) * 0.02);
            }
        };
        init_mat(&mut params.wte, &mut rng);
        init_mat(&mut params.wpe, &mut rng);
        for l in &mut params.layers {
            init_mat(&mut l.wq, &mut rng);
            init_mat(&mut l.wk, &mut rng);
            init_mat(&mut l.wv, &mut rng);
            init_mat(&mut l.wo, &mut rng);
            init_mat(&mut l.w1, &mut rng);
            init_mat(&mut l.w2, &mut rng);
            l.ln1_g.iter_mut().for_each(|x| *x = S::one());
            l.ln2_g.iter_mut().for_each(|x| *x = S::one());
        }
        params.lnf_g.iter_mut().for_each(|x| *x = S::one());
        init_mat(&mut params.head, &mut rng);
        TransformerModel { cfg, params }
    }

    pub fn encode(text: &str) -> Vec<usize> {
        text.chars().map(|c| (c as usize).min(VOCAB - 1)).collect()
    }

    fn embed(&self, tokens: &[usize]) -> Mat<S> {
        let d = self.cfg.d_model;
        let mut x = Mat::zeros(tokens.len(), d);
        for (i, &t) in tokens.iter().enumerate() {
            let te = self.params.wte.row(t);
            let pe = self.params.wpe.row(i);
            let row = x.row_mut(i);
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }
        x
    }

    fn forward_cached(&self, tokens: &[usize]) -> SeqCache<S> {
        assert!(!tokens.is_empty() && tokens.len() <= self.cfg.max_len);
        let h = self.cfg.n_heads;
        let hd = self.cfg.d_model / h;
        let scale = s::<S>(1.0 / (hd as f64).sqrt());
        let mut x = self.embed(tokens);
        let mut caches = Vec::with_capacity(self.cfg.n_layers);
        for l in &self.params.layers {
            let t = x.rows;
            let (a1, xhat1, rstd1) = ln_forward(&x, &l.ln1_g, &l.ln1_b);
            let mut q = a1.matmul(&l.wq);
            q.add_row_vec(&l.bq);
            let mut k = a1.matmul(&l.wk);
            k.add_row_vec(&l.bk);
            let mut v = a1.matmul(&l.wv);
            v.add_row_vec(&l.bv);
            let mut probs: Vec<Mat<S>> = Vec::with_capacity(h);
            let mut o = Mat::zeros(t, self.cfg.d_model);
            for head in 0..h {
                let base = head * hd;
                let mut p = Mat::zeros(t, t);
                for i in 0..t {
                    let qi = &q.row(i)[base..base + hd];
                    let mut mx = S::neg_infinity();
                    let mut scores = vec![S::zero(); i + 1];
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let kj = &k.row(j)[base..base + hd];
                        let mut acc = S::zero();
                        for (a, b) in qi.iter().zip(kj.iter()) {
                            acc += *a * *b;
                        }
                        *sc = acc * scale;
                        if *sc > mx {
                            mx = *sc;
                        }
                    }
                    let mut z = S::zero();
                    for sc in scores.iter_mut() {
                        *sc = (*sc - mx).exp();
                        z += *sc;
                    }
                    for (j, sc) in scores.iter().enumerate() {
                        p.data[i * t + j] = *sc / z;
                    }
                    let orow = o.row_mut(i);
                    for j in 0..=i {
                        let pij = p.at(i, j);
                        let vj = &v.row(j)[base..base + hd];
                        for (tt, vv) in vj.iter().enumerate() {
                            orow[base + tt] += pij * *vv;
                        }
                    }
                }
                probs.push(p);
            }
            let mut attn = o.matmul(&l.wo);
            attn.add_row_vec(&l.bo);
            let mut x_mid = x.clone();
            x_mid.add_assign(&attn);
            let (a2, xhat2, rstd2) = ln_forward(&x_mid, &l.ln2_g, &l.ln2_b);
            let mut h1 = a2.matmul(&l.w1);
            h1.add_row_vec(&l.b1);
            let mut g = h1.clone();
            for x in g.data.iter_mut() {
                *x = gelu(*x);
            }
            let mut mlp = g.matmul(&l.w2);
            mlp.add_row_vec(&l.b2);
            let mut x_out = x_mid;
            x_out.add_assign(&mlp);
            caches.push(LayerCache { a1, xhat1, rstd1, q, k, v, probs, o, xhat2, rstd2, a2, h1, g });
            x = x_out;
        }
        let (yf, xhatf, rstdf) = ln_forward(&x, &self.params.lnf_g, &self.params.lnf_b);
        let logits = yf.matmul(&self.params.head);
        SeqCache { layers: caches, yf, xhatf, rstdf, logits }
    }

    /// Cross-entropy over the masked targets plus gradient accumulation.
    /// Targets are the characters at positions `prompt_len..`, each
    /// predicted from the previous position; every masked character's
    /// gradient is scaled by `scale`. Returns the summed cross-entropy.
    pub fn loss_and_grad(
        &self,
        tokens: &[usize],
        prompt_len: usize,
        grads: &mut ParamSet<S>,
        scale: S,
    ) -> f64 {
        let t = tokens.len();
        assert!(prompt_len >= 1 && prompt_len < t);
        let cache = self.forward_cached(tokens);
        let mut dlogits = Mat::zeros(t, VOCAB);
        let mut loss = 0.0f64;
        for i in (prompt_len - 1)..(t - 1) {
            let target = tokens[i + 1];
            let row = cache.logits.row(i);
            let mut mx = S::neg_infinity();
            for &x in row {
                if x > mx {
                    mx = x;
                }
            }
            let mut z = S::zero();
            for &x in row {
                z += (x - mx).exp();
            }
            let lse = mx + z.ln();
            loss -= (row[target] - lse).to_f64().expect("finite loss");
            let drow = dlogits.row_mut(i);
            for (j, &x) in row.iter().enumerate() {
                let p = (x - lse).exp();
                drow[j] = p * scale;
            }
            drow[target] -= scale;
        }
        self.backward(tokens, &cache, &dlogits, grads);
        loss
    }

    fn backward(&self, tokens: &[usize], cache: &SeqCache<S>, dlogits: &Mat<S>, grads: &mut ParamSet<S>) {
        let h = self.cfg.n_heads;
        let hd = self.cfg.d_model / h;
        let scale = s::<S>(1.0 / (hd as f64).sqrt());
        // Head and final norm.
        grads.head.add_assign(&cache.yf.matmul_tn(dlogits));
        let dyf = dlogits.matmul_nt(&self.params.head);
        let mut dx = ln_backward(
            &dyf,
            &cache.xhatf,
            &cache.rstdf,
            &self.params.lnf_g,
            &mut grads.lnf_g,
            &mut grads.lnf_b,
        );
        for (li, l) in self.params.layers.iter().enumerate().rev() {
            let lc = &cache.layers[li];
            let gl = &mut grads.layers[li];
            let t = dx.rows;
            // Feed-forward half: x_out = x_mid + gelu(a2 w1 + b1) w2 + b2.
            let dmlp = &dx;
            gl.w2.add_assign(&lc.g.matmul_tn(dmlp));
            for (a, b) in gl.b2.iter_mut().zip(dmlp.col_sums()) {
                *a += b;
            }
            let dgelu = dmlp.matmul_nt(&l.w2);
            let mut dh1 = dgelu;
            for (dv, &hx) in dh1.data.iter_mut().zip(lc.h1.data.iter()) {
                *dv = *dv * gelu_grad(hx);
            }
            gl.w1.add_assign(&lc.a2.matmul_tn(&dh1));
            for (a, b) in gl.b1.iter_mut().zip(dh1.col_sums()) {
                *a += b;
            }
            let da2 = dh1.matmul_nt(&l.w1);
            let dx_mid_from_ln =
                ln_backward(&da2, &lc.xhat2, &lc.rstd2, &l.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
            let mut dx_mid = dx.clone();
            dx_mid.add_assign(&dx_mid_from_ln);
            // Attention half: x_mid = x_in + (heads(a1)) wo + bo.
            let dattn = &dx_mid;
            gl.wo.add_assign(&lc.o.matmul_tn(dattn));
            for (a, b) in gl.bo.iter_mut().zip(dattn.col_sums()) {
                *a += b;
            }
            let do_ = dattn.matmul_nt(&l.wo);
            let mut dq = Mat::zeros(t, self.cfg.d_model);
            let mut dk = Mat::zeros(t, self.cfg.d_model);
            let mut dv = Mat::zeros(t, self.cfg.d_model);
            for head in 0..h {
                let base = head * hd;
                let p = &lc.probs[head];
                for i in 0..t {
                    let doi = &do_.row(i)[base..base + hd];
                    // dp over j <= i, then the softmax Jacobian.
                    let mut dp = vec![S::zero(); i + 1];
                    for (j, dpj) in dp.iter_mut().enumerate() {
                        let vj = &lc.v.row(j)[base..base + hd];
                        let mut acc = S::zero();
                        for (a, b) in doi.iter().zip(vj.iter()) {
                            acc += *a * *b;
                        }
                        *dpj = acc;
                    }
                    let mut row_dot = S::zero();
                    for (j, dpj) in dp.iter().enumerate() {
                        row_dot += p.at(i, j) * *dpj;
                    }
                    for (j, dpj) in dp.iter().enumerate() {
                        let ds = p.at(i, j) * (*dpj - row_dot) * scale;
                        if ds == S::zero() {
                            continue;
                        }
                        let kj = &lc.k.row(j)[base..base + hd];
                        let qi = &lc.q.row(i)[base..base + hd];
                        for tt in 0..hd {
                            dq.add_at(i, base + tt, ds * kj[tt]);
                            dk.add_at(j, base + tt, ds * qi[tt]);
                        }
                    }
                    // dv accumulation: dv_j += p_ij * do_i.
                    for j in 0..=i {
                        let pij = p.at(i, j);
                        if pij == S::zero() {
                            continue;
                        }
                        for tt in 0..hd {
                            dv.add_at(j, base + tt, pij * doi[tt]);
                        }
                    }
                }
            }
            gl.wq.add_assign(&lc.a1.matmul_tn(&dq));
            for (a, b) in gl.bq.iter_mut().zip(dq.col_sums()) {
                *a += b;
            }
            gl.wk.add_assign(&lc.a1.matmul_tn(&dk));
            for (a, b) in gl.bk.iter_mut().zip(dk.col_sums()) {
                *a += b;
            }
            gl.wv.add_assign(&lc.a1.matmul_tn(&dv));
            for (a, b) in gl.bv.iter_mut().zip(dv.col_sums()) {
                *a += b;
            }
            let mut da1 = dq.matmul_nt(&l.wq);
            da1.add_assign(&dk.matmul_nt(&l.wk));
            da1.add_assign(&dv.matmul_nt(&l.wv));
            let dx_in_from_ln =
                ln_backward(&da1, &lc.xhat1, &lc.rstd1, &l.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
            let mut dx_in = dx_mid;
            dx_in.add_assign(&dx_in_from_ln);
            dx = dx_in;
        }
        // Embeddings.
        for (i, &tok) in tokens.iter().enumerate() {
            let drow = dx.row(i);
            let te = grads.wte.row_mut(tok);
            for (a, b) in te.iter_mut().zip(drow.iter()) {
                *a += *b;
            }
            let pe = grads.wpe.row_mut(i);
            for (a, b) in pe.iter_mut().zip(drow.iter()) {
                *a += *b;
            }
        }
    }

    /// Log-probabilities for the next character after `text`, using at most
    /// the trailing `max_len` characters of context.
    pub fn logprobs_after(&self, text: &str) -> Vec<f64> {
        let mut tokens = Self::encode(text);
        if tokens.is_empty() {
            tokens.push((super::EOT as usize).min(VOCAB - 1));
        }
        if tokens.len() > self.cfg.max_len {
            tokens = tokens[tokens.len() - self.cfg.max_len..].to_vec();
        }
        let cache = self.forward_cached(&tokens);
        let row = cache.logits.row(tokens.len() - 1);
        log_softmax_row(row)
    }

    /// Starts a key/value-cached scoring session on `prompt`.
    pub fn session(&self, prompt: &str) -> TransformerSession<'_, S> {
        let mut sess = TransformerSession {
            model: self,
            text: String::new(),
            kcache: vec![Vec::new(); self.cfg.n_layers],
            vcache: vec![Vec::new(); self.cfg.n_layers],
            last_logprobs: vec![-(VOCAB as f64).ln(); VOCAB],
        };
        sess.append(prompt);
        sess
    }
}

fn log_softmax_row<S: Scalar>(row: &[S]) -> Vec<f64> {
    let mut mx = f64::NEG_INFINITY;
    let as_f64: Vec<f64> = row.iter().map(|x| x.to_f64().expect("finite logit")).collect();
    for &x in &as_f64 {
        if x > mx {
            mx = x;
        }
    }
    let z: f64 = as_f64.iter().map(|x| (x - mx).exp()).sum();
    let lse = mx + z.ln();
    as_f64.into_iter().map(|x| x - lse).collect()
}

struct LayerCache<S> {
    a1: Mat<S>,
    xhat1: Mat<S>,
    rstd1: Vec<S>,
    q: Mat<S>,
    k: Mat<S>,
    v: Mat<S>,
    probs: Vec<Mat<S>>,
    o: Mat<S>,
    xhat2: Mat<S>,
    rstd2: Vec<S>,
    a2: Mat<S>,
    h1: Mat<S>,
    g: Mat<S>,
}

struct SeqCache<S> {
    layers: Vec<LayerCache<S>>,
    yf: Mat<S>,
    xhatf: Mat<S>,
    rstdf: Vec<S>,
    logits: Mat<S>,
}

/// Row-wise layer norm; returns (output, normalized input, 1/std per row).
fn ln_forward<S: Scalar>(x: &Mat<S>, g: &[S], b: &[S]) -> (Mat<S>, Mat<S>, Vec<S>) {
    let d = x.cols;
    let mut y = Mat::zeros(x.rows, d);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut rstds = Vec::with_capacity(x.rows);
    let dn = s::<S>(d as f64);
    for i in 0..x.rows {
        let row = x.row(i);
        let mut mean = S::zero();
        for &v in row {
            mean += v;
        }
        mean = mean / dn;
        let mut var = S::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var = var / dn;
        let rstd = (var + s::<S>(LN_EPS)).sqrt().recip();
        rstds.push(rstd);
        let xh = xhat.row_mut(i);
        let yr = y.row_mut(i);
        for j in 0..d {
            let v = (row[j] - mean) * rstd;
            xh[j] = v;
            yr[j] = g[j] * v + b[j];
        }
    }
    (y, xhat, rstds)
}

/// Backward pass of [`ln_forward`]; accumulates into `dg`/`db`, returns dx.
fn ln_backward<S: Scalar>(
    dy: &Mat<S>,
    xhat: &Mat<S>,
    rstd: &[S],
    g: &[S],
    dg: &mut [S],
    db: &mut [S],
) -> Mat<S> {
    let d = dy.cols;
    let dn = s::<S>(d as f64);
    let mut dx = Mat::zeros(dy.rows, d);
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = xhat.row(i);
        let mut sum_dxhat = S::zero();
        let mut sum_dxhat_xhat = S::zero();
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        let mean_dxhat = sum_dxhat / dn;
        let mean_dxhat_xhat = sum_dxhat_xhat / dn;
        let out = dx.row_mut(i);
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            out[j] = rstd[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<S: Scalar>(x: S) -> S {
    let c = s::<S>(GELU_C);
    let a = s::<S>(GELU_A);
    let u = c * (x + a * x * x * x);
    s::<S>(0.5) * x * (S::one() + u.tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = s::<S>(GELU_C);
    let a = s::<S>(GELU_A);
    let half = s::<S>(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + s::<S>(3.0) * a * x * x)
}

// ---------------------------------------------------------------------------
// Incremental scoring.

/// Key/value-cached autoregressive scorer: appending characters costs one
/// attention row each instead of a full re-forward.
#[derive(Clone)]
pub struct TransformerSession<'a, S> {
    model: &'a TransformerModel<S>,
    text: String,
    /// Per layer, cached key rows (one per consumed character).
    kcache: Vec<Vec<Vec<S>>>,
    vcache: Vec<Vec<Vec<S>>>,
    last_logprobs: Vec<f64>,
}

impl<'a, S: Scalar> TransformerSession<'a, S> {
    fn append_char(&mut self, ch: char) {
        let cfg = &self.model.cfg;
        if self.kcache[0].len() >= cfg.max_len {
            // Context overflow: rebuild from the trailing window.
            let tail: String = {
                let chars: Vec<char> = self.text.chars().collect();
                chars[chars.len() + 1 - cfg.max_len..].iter().collect()
            };
            self.text = String::new();
            for kc in self.kcache.iter_mut() {
                kc.clear();
            }
            for vc in self.vcache.iter_mut() {
                vc.clear();
            }
            for c in tail.chars() {
                self.append_char(c);
            }
        }
        let pos = self.kcache[0].len();
        let d = cfg.d_model;
        let h = cfg.n_heads;
        let hd = d / h;
        let scale = s::<S>(1.0 / (hd as f64).sqrt());
        let tok = (ch as usize).min(VOCAB - 1);
        let mut x: Vec<S> = self
            .model
            .params
            .wte
            .row(tok)
            .iter()
            .zip(self.model.params.wpe.row(pos).iter())
            .map(|(a, b)| *a + *b)
            .collect();
        for (li, l) in self.model.params.layers.iter().enumerate() {
            let a1 = ln_row(&x, &l.ln1_g, &l.ln1_b);
            let q = row_affine(&a1, &l.wq, &l.bq);
            let k = row_affine(&a1, &l.wk, &l.bk);
            let v = row_affine(&a1, &l.wv, &l.bv);
            self.kcache[li].push(k);
            self.vcache[li].push(v);
            let keys = &self.kcache[li];
            let vals = &self.vcache[li];
            let q = &q;
            let mut o = vec![S::zero(); d];
            for head in 0..h {
                let base = head * hd;
                let qh = &q[base..base + hd];
                let mut mx = S::neg_infinity();
                let mut scores: Vec<S> = Vec::with_capacity(keys.len());
                for krow in keys.iter() {
                    let kh = &krow[base..base + hd];
                    let mut acc = S::zero();
                    for (a, b) in qh.iter().zip(kh.iter()) {
                        acc += *a * *b;
                    }
                    let sc = acc * scale;
                    if sc > mx {
                        mx = sc;
                    }
                    scores.push(sc);
                }
                let mut z = S::zero();
                for sc in scores.iter_mut() {
                    *sc = (*sc - mx).exp();
                    z += *sc;
                }
                for (j, sc) in scores.iter().enumerate() {
                    let p = *sc / z;
                    let vh = &vals[j][base..base + hd];
                    for tt in 0..hd {
                        o[base + tt] += p * vh[tt];
                    }
                }
            }
            let attn = row_affine(&o, &l.wo, &l.bo);
            for (xi, ai) in x.iter_mut().zip(attn.iter()) {
                *xi += *ai;
            }
            let a2 = ln_row(&x, &l.ln2_g, &l.ln2_b);
            let mut h1 = row_affine(&a2, &l.w1, &l.b1);
            for v in h1.iter_mut() {
                *v = gelu(*v);
            }
            let mlp = row_affine(&h1, &l.w2, &l.b2);
            for (xi, mi) in x.iter_mut().zip(mlp.iter()) {
                *xi += *mi;
            }
        }
        let yf = ln_row(&x, &self.model.params.lnf_g, &self.model.params.lnf_b);
        let logits = row_affine_nobias(&yf, &self.model.params.head);
        self.last_logprobs = log_softmax_row(&logits);
        self.text.push(ch);
    }
}

fn ln_row<S: Scalar>(x: &[S], g: &[S], b: &[S]) -> Vec<S> {
    let d = x.len();
    let dn = s::<S>(d as f64);
    let mut mean = S::zero();
    for &v in x {
        mean += v;
    }
    mean = mean / dn;
    let mut var = S::zero();
    for &v in x {
        let c = v - mean;
        var += c * c;
    }
    var = var / dn;
    let rstd = (var + s::<S>(LN_EPS)).sqrt().recip();
    (0..d).map(|j| g[j] * ((x[j] - mean) * rstd) + b[j]).collect()
}

fn row_affine<S: Scalar>(x: &[S], w: &Mat<S>, b: &[S]) -> Vec<S> {
    let mut out = b.to_vec();
    for (p, &xv) in x.iter().enumerate() {
        if xv == S::zero() {
            continue;
        }
        let wrow = w.row(p);
        for (o, &wv) in out.iter_mut().zip(wrow.iter()) {
            *o += xv * wv;
        }
    }
    out
}

fn row_affine_nobias<S: Scalar>(x: &[S], w: &Mat<S>) -> Vec<S> {
    let mut out = vec![S::zero(); w.cols];
    for (p, &xv) in x.iter().enumerate() {
        if xv == S::zero() {
            continue;
        }
        let wrow = w.row(p);
        for (o, &wv) in out.iter_mut().zip(wrow.iter()) {
            *o += xv * wv;
        }
    }
    out
}

impl<'a, S: Scalar> ScoringSession for TransformerSession<'a, S> {
    fn append(&mut self, text: &str) {
        for ch in text.chars() {
            self.append_char(ch);
        }
    }

    fn next_char_logprobs(&self) -> Vec<f64> {
        self.last_logprobs.clone()
    }

    fn text(&self) -> &str {
        &self.text
    }
}

impl<S: Scalar> SequenceModel for TransformerModel<S> {
    fn next_char_logprobs(&self, text: &str) -> Vec<f64> {
        self.logprobs_after(text)
    }

    fn sequence_loglik(&self, prompt: &str, continuation: &str) -> f64 {
        let mut sess = self.session(prompt);
        let mut total = 0.0;
        for ch in continuation.chars() {
            let lp = sess.next_char_logprobs();
            total += lp[(ch as usize).min(VOCAB - 1)];
            sess.append(&ch.to_string());
        }
        total
    }

    fn score_continuations(&self, prompt: &str, candidates: &[String]) -> Vec<f64> {
        let base = self.session(prompt);
        let logliks: Vec<f64> = candidates
            .iter()
            .map(|cand| {
                let mut sess = base.clone();
                let mut total = 0.0;
                for ch in cand.chars() {
                    let lp = sess.next_char_logprobs();
                    total += lp[(ch as usize).min(VOCAB - 1)];
                    sess.append(&ch.to_string());
                }
                total
            })
            .collect();
        renormalize(&logliks)
    }

    fn start_session(&self, prompt: &str) -> Box<dyn ScoringSession + '_> {
        Box::new(self.session(prompt))
    }
}
