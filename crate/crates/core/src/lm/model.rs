//! Decoder-only character transformer: learned absolute position embeddings
//! added at the input, pre-norm residual blocks (RMS norm, multi-head causal
//! attention, ReLU MLP) and an untied output projection.
//!
//! All parameters live in one flat vector so the optimizer and serialization
//! see a single buffer; [`Layout`] maps names to offsets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{log_softmax_row, matmul, matmul_a_bt, matmul_at_b_acc, rmsnorm, rmsnorm_backward};
use crate::attention::{augment, default_scale, prefix_causal_attention};
use crate::error::{Error, Result};
use crate::memory::ReadResult;
use crate::vector::DenseVector;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    /// May be left out of config files; training fills it from the corpus.
    #[serde(default)]
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Longest window the position table covers.
    pub max_len: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0
            || self.d_model == 0
            || self.heads == 0
            || self.layers == 0
            || self.d_ff == 0
            || self.max_len == 0
        {
            return Err(Error::InvalidConfig(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BlockLayout {
    pub ln1: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockLayout>,
    pub ln_f: usize,
    pub w_out: usize,
    pub total: usize,
}

impl Layout {
    fn new(s: &ModelShape) -> Self {
        let (d, f) = (s.d_model, s.d_ff);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok_emb = take(s.vocab * d);
        let pos_emb = take(s.max_len * d);
        let blocks = (0..s.layers)
            .map(|_| BlockLayout {
                ln1: take(d),
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                ln2: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let ln_f = take(d);
        let w_out = take(d * s.vocab);
        Layout { tok_emb, pos_emb, blocks, ln_f, w_out, total: at }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct Model {
    shape: ModelShape,
    params: Vec<f64>,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    shape: ModelShape,
    params: Vec<f64>,
}

impl TryFrom<ModelRepr> for Model {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        Model::from_params(r.shape, r.params)
    }
}

impl From<Model> for ModelRepr {
    fn from(m: Model) -> Self {
        ModelRepr { shape: m.shape, params: m.params }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.params == other.params
    }
}

/// Per-(layer, head) attention provider for [`Model::forward_with`].
pub trait AttentionHook {
    /// Returns the `L` head outputs for the window's native queries, keys and values.
    fn attend(
        &mut self,
        layer: usize,
        head: usize,
        queries: &[DenseVector],
        keys: &[DenseVector],
        values: &[DenseVector],
        scale: f64,
    ) -> Result<Vec<DenseVector>>;
}

/// Plain causal attention (empty prefix).
pub struct PlainAttention;

impl AttentionHook for PlainAttention {
    fn attend(
        &mut self,
        _layer: usize,
        _head: usize,
        queries: &[DenseVector],
        keys: &[DenseVector],
        values: &[DenseVector],
        scale: f64,
    ) -> Result<Vec<DenseVector>> {
        let kv = augment(keys, values, &ReadResult::default())?;
        prefix_causal_attention(queries, &kv, scale)
    }
}

pub(crate) struct BlockCache {
    x_in: Vec<f64>,
    n1: Vec<f64>,
    r1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head, `T x T` causal softmax weights (zero above the diagonal).
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
    x_mid: Vec<f64>,
    n2: Vec<f64>,
    r2: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
}

pub(crate) struct ForwardCache {
    tokens: Vec<u32>,
    blocks: Vec<BlockCache>,
    x_final: Vec<f64>,
    nf: Vec<f64>,
    rf: Vec<f64>,
}

impl Model {
    /// Random initialization: embeddings N(0, 0.1^2), weights N(0, 1/fan_in),
    /// residual output projections further scaled by 1/sqrt(2 layers).
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f, v) = (shape.d_model, shape.d_ff, shape.vocab);
        let mut fill = |start: usize, len: usize, std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).unwrap();
            for p in &mut params[start..start + len] {
                *p = normal.sample(rng);
            }
        };
        let resid = 1.0 / (2.0 * shape.layers as f64).sqrt();
        fill(layout.tok_emb, v * d, 0.1, &mut rng);
        fill(layout.pos_emb, shape.max_len * d, 0.1, &mut rng);
        for b in &layout.blocks {
            let inv_d = 1.0 / (d as f64).sqrt();
            fill(b.wq, d * d, inv_d, &mut rng);
            fill(b.wk, d * d, inv_d, &mut rng);
            fill(b.wv, d * d, inv_d, &mut rng);
            fill(b.wo, d * d, inv_d * resid, &mut rng);
            fill(b.w1, d * f, inv_d, &mut rng);
            fill(b.w2, f * d, resid / (f as f64).sqrt(), &mut rng);
        }
        fill(layout.w_out, d * v, 1.0 / (d as f64).sqrt(), &mut rng);
        for b in &layout.blocks {
            params[b.ln1..b.ln1 + d].fill(1.0);
            params[b.ln2..b.ln2 + d].fill(1.0);
        }
        params[layout.ln_f..layout.ln_f + d].fill(1.0);
        Ok(Self { shape, params, layout })
    }

    pub fn from_params(shape: ModelShape, params: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        if params.len() != layout.total {
            return Err(Error::InvalidInput(format!("expected {} parameters, got {}", layout.total, params.len())));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { shape, params, layout })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn p(&self, start: usize, len: usize) -> &[f64] {
        &self.params[start..start + len]
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.shape.max_len {
            return Err(Error::InvalidInput(format!(
                "window of {} tokens exceeds the model's {} positions",
                tokens.len(),
                self.shape.max_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.shape.vocab) {
            return Err(Error::InvalidInput(format!("token id {t} out of vocabulary ({})", self.shape.vocab)));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[u32]) -> Vec<f64> {
        let d = self.shape.d_model;
        let mut x = vec![0.0; tokens.len() * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let te = self.p(self.layout.tok_emb + tok as usize * d, d);
            let pe = self.p(self.layout.pos_emb + t * d, d);
            for ((o, a), b) in x[t * d..(t + 1) * d].iter_mut().zip(te).zip(pe) {
                *o = a + b;
            }
        }
        x
    }

    /// MLP sub-block with residual; returns `(x_out, n2, r2, hpre, hact)`.
    #[allow(clippy::type_complexity)]
    fn mlp(&self, l: usize, x_mid: &[f64], t: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (d, f) = (self.shape.d_model, self.shape.d_ff);
        let b = &self.layout.blocks[l];
        let (n2, r2) = rmsnorm(x_mid, self.p(b.ln2, d), t);
        let mut hpre = matmul(&n2, self.p(b.w1, d * f), t, d, f);
        let b1 = self.p(b.b1, f);
        for row in hpre.chunks_mut(f) {
            for (h, bias) in row.iter_mut().zip(b1) {
                *h += bias;
            }
        }
        let hact: Vec<f64> = hpre.iter().map(|h| h.max(0.0)).collect();
        let m = matmul(&hact, self.p(b.w2, f * d), t, f, d);
        let b2 = self.p(b.b2, d);
        let mut x_out = x_mid.to_vec();
        for (r, row) in x_out.chunks_mut(d).enumerate() {
            for j in 0..d {
                row[j] += m[r * d + j] + b2[j];
            }
        }
        (x_out, n2, r2, hpre, hact)
    }

    fn unembed(&self, x: &[f64], t: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (d, v) = (self.shape.d_model, self.shape.vocab);
        let (nf, rf) = rmsnorm(x, self.p(self.layout.ln_f, d), t);
        let logits = matmul(&nf, self.p(self.layout.w_out, d * v), t, d, v);
        (logits, nf, rf)
    }

    /// Forward pass whose attention is delegated to `hook`, one call per
    /// (layer, head) in layer-major order. Returns `T x vocab` logits.
    pub fn forward_with<H: AttentionHook>(&self, tokens: &[u32], hook: &mut H) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let t = tokens.len();
        let (d, hd) = (self.shape.d_model, self.shape.head_dim());
        let scale = default_scale(hd);
        let mut x = self.embed(tokens);
        for l in 0..self.shape.layers {
            let b = &self.layout.blocks[l];
            let (n1, _) = rmsnorm(&x, self.p(b.ln1, d), t);
            let q = matmul(&n1, self.p(b.wq, d * d), t, d, d);
            let k = matmul(&n1, self.p(b.wk, d * d), t, d, d);
            let v = matmul(&n1, self.p(b.wv, d * d), t, d, d);
            let mut o = vec![0.0; t * d];
            for h in 0..self.shape.heads {
                let split = |m: &[f64]| -> Result<Vec<DenseVector>> {
                    (0..t).map(|i| DenseVector::new(m[i * d + h * hd..i * d + (h + 1) * hd].to_vec())).collect()
                };
                let out = hook.attend(l, h, &split(&q)?, &split(&k)?, &split(&v)?, scale)?;
                if out.len() != t {
                    return Err(Error::InvalidInput(format!("attention hook returned {} rows for {t}", out.len())));
                }
                for (i, a) in out.iter().enumerate() {
                    Error::check_dim(hd, a.dim())?;
                    o[i * d + h * hd..i * d + (h + 1) * hd].copy_from_slice(a);
                }
            }
            let attn = matmul(&o, self.p(b.wo, d * d), t, d, d);
            let x_mid: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
            x = self.mlp(l, &x_mid, t).0;
        }
        Ok(self.unembed(&x, t).0)
    }

    /// Plain causal forward pass with its own attention kernel, keeping the
    /// activations needed by [`Model::backward`].
    pub(crate) fn forward_cached(&self, tokens: &[u32]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_tokens(tokens)?;
        let t = tokens.len();
        let (d, hd, heads) = (self.shape.d_model, self.shape.head_dim(), self.shape.heads);
        let scale = default_scale(hd);
        let mut x = self.embed(tokens);
        let mut blocks = Vec::with_capacity(self.shape.layers);
        for l in 0..self.shape.layers {
            let b = &self.layout.blocks[l];
            let (n1, r1) = rmsnorm(&x, self.p(b.ln1, d), t);
            let q = matmul(&n1, self.p(b.wq, d * d), t, d, d);
            let k = matmul(&n1, self.p(b.wk, d * d), t, d, d);
            let v = matmul(&n1, self.p(b.wv, d * d), t, d, d);
            let mut o = vec![0.0; t * d];
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let off = h * hd;
                let mut p = vec![0.0; t * t];
                for i in 0..t {
                    let qi = &q[i * d + off..i * d + off + hd];
                    let row = &mut p[i * t..i * t + i + 1];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &k[j * d + off..j * d + off + hd];
                        *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                        max = max.max(*s);
                    }
                    let mut sum = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    for s in row.iter_mut() {
                        *s /= sum;
                    }
                    let oi = &mut o[i * d + off..i * d + off + hd];
                    for (j, &w) in row.iter().enumerate() {
                        for (a, vv) in oi.iter_mut().zip(&v[j * d + off..j * d + off + hd]) {
                            *a += w * vv;
                        }
                    }
                }
                probs.push(p);
            }
            let attn = matmul(&o, self.p(b.wo, d * d), t, d, d);
            let x_mid: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
            let (x_out, n2, r2, hpre, hact) = self.mlp(l, &x_mid, t);
            blocks.push(BlockCache { x_in: x, n1, r1, q, k, v, probs, o, x_mid, n2, r2, hpre, hact });
            x = x_out;
        }
        let (logits, nf, rf) = self.unembed(&x, t);
        Ok((logits, ForwardCache { tokens: tokens.to_vec(), blocks, x_final: x, nf, rf }))
    }

    /// Plain causal logits (`T x vocab`).
    pub fn logits(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(tokens)?.0)
    }

    /// Gradient of the loss with respect to every parameter, given the loss
    /// gradient at the logits. Accumulates into `grads`.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grads: &mut [f64]) {
        let t = cache.tokens.len();
        let (d, f, v, hd, heads) =
            (self.shape.d_model, self.shape.d_ff, self.shape.vocab, self.shape.head_dim(), self.shape.heads);
        let scale = default_scale(hd);
        let lay = &self.layout;

        matmul_at_b_acc(&cache.nf, dlogits, t, d, v, &mut grads[lay.w_out..lay.w_out + d * v]);
        let dnf = matmul_a_bt(dlogits, self.p(lay.w_out, d * v), t, d, v);
        let mut dx = vec![0.0; t * d];
        rmsnorm_backward(
            &dnf,
            &cache.x_final,
            self.p(lay.ln_f, d),
            &cache.rf,
            &mut grads[lay.ln_f..lay.ln_f + d],
            &mut dx,
        );

        for l in (0..self.shape.layers).rev() {
            let b = &lay.blocks[l];
            let c = &cache.blocks[l];

            // MLP
            for row in dx.chunks(d) {
                for (g, x) in grads[b.b2..b.b2 + d].iter_mut().zip(row) {
                    *g += x;
                }
            }
            matmul_at_b_acc(&c.hact, &dx, t, f, d, &mut grads[b.w2..b.w2 + f * d]);
            let mut dh = matmul_a_bt(&dx, self.p(b.w2, f * d), t, f, d);
            for (g, h) in dh.iter_mut().zip(&c.hpre) {
                if *h <= 0.0 {
                    *g = 0.0;
                }
            }
            for row in dh.chunks(f) {
                for (g, x) in grads[b.b1..b.b1 + f].iter_mut().zip(row) {
                    *g += x;
                }
            }
            matmul_at_b_acc(&c.n2, &dh, t, d, f, &mut grads[b.w1..b.w1 + d * f]);
            let dn2 = matmul_a_bt(&dh, self.p(b.w1, d * f), t, d, f);
            let mut dx_mid = dx.clone();
            rmsnorm_backward(&dn2, &c.x_mid, self.p(b.ln2, d), &c.r2, &mut grads[b.ln2..b.ln2 + d], &mut dx_mid);

            // attention
            matmul_at_b_acc(&c.o, &dx_mid, t, d, d, &mut grads[b.wo..b.wo + d * d]);
            let d_o = matmul_a_bt(&dx_mid, self.p(b.wo, d * d), t, d, d);
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            for h in 0..heads {
                let off = h * hd;
                let p = &c.probs[h];
                let mut ds = vec![0.0; t];
                for i in 0..t {
                    let doi = &d_o[i * d + off..i * d + off + hd];
                    let mut dot_sum = 0.0;
                    for j in 0..=i {
                        let vj = &c.v[j * d + off..j * d + off + hd];
                        let dp: f64 = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                        ds[j] = dp;
                        dot_sum += p[i * t + j] * dp;
                        let w = p[i * t + j];
                        for (g, x) in dv[j * d + off..j * d + off + hd].iter_mut().zip(doi) {
                            *g += w * x;
                        }
                    }
                    for j in 0..=i {
                        let g = p[i * t + j] * (ds[j] - dot_sum) * scale;
                        if g == 0.0 {
                            continue;
                        }
                        for e in 0..hd {
                            dq[i * d + off + e] += g * c.k[j * d + off + e];
                            dk[j * d + off + e] += g * c.q[i * d + off + e];
                        }
                    }
                }
            }
            matmul_at_b_acc(&c.n1, &dq, t, d, d, &mut grads[b.wq..b.wq + d * d]);
            matmul_at_b_acc(&c.n1, &dk, t, d, d, &mut grads[b.wk..b.wk + d * d]);
            matmul_at_b_acc(&c.n1, &dv, t, d, d, &mut grads[b.wv..b.wv + d * d]);
            let mut dn1 = matmul_a_bt(&dq, self.p(b.wq, d * d), t, d, d);
            for (acc, x) in dn1.iter_mut().zip(matmul_a_bt(&dk, self.p(b.wk, d * d), t, d, d)) {
                *acc += x;
            }
            for (acc, x) in dn1.iter_mut().zip(matmul_a_bt(&dv, self.p(b.wv, d * d), t, d, d)) {
                *acc += x;
            }
            let mut dx_in = dx_mid.clone();
            rmsnorm_backward(&dn1, &c.x_in, self.p(b.ln1, d), &c.r1, &mut grads[b.ln1..b.ln1 + d], &mut dx_in);
            dx = dx_in;
        }

        for (i, &tok) in cache.tokens.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let te = lay.tok_emb + tok as usize * d;
            for (g, x) in grads[te..te + d].iter_mut().zip(row) {
                *g += x;
            }
            let pe = lay.pos_emb + i * d;
            for (g, x) in grads[pe..pe + d].iter_mut().zip(row) {
                *g += x;
            }
        }
    }
}

/// Negative log-likelihood of `tokens[i + 1]` under row `i` of `logits`,
/// for every position that has a next token.
pub fn next_token_nll(logits: &[f64], tokens: &[u32], vocab: usize) -> Vec<f64> {
    (0..tokens.len().saturating_sub(1))
        .map(|i| -log_softmax_row(&logits[i * vocab..(i + 1) * vocab])[tokens[i + 1] as usize])
        .collect()
}

/// Summed next-token loss and its gradient with respect to the logits.
pub(crate) fn next_token_loss_grad(logits: &[f64], tokens: &[u32], vocab: usize, norm: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for i in 0..tokens.len().saturating_sub(1) {
        let ls = log_softmax_row(&logits[i * vocab..(i + 1) * vocab]);
        let target = tokens[i + 1] as usize;
        loss -= ls[target];
        for (j, g) in grad[i * vocab..(i + 1) * vocab].iter_mut().enumerate() {
            *g = (ls[j].exp() - if j == target { 1.0 } else { 0.0 }) / norm;
        }
    }
    (loss, grad)
}
