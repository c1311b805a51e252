//! Causal attention over a retrieved prefix followed by the native window.
//!
//! Every query sees all `P` prefix entries plus native entries up to and
//! including its own position. The prefix is used verbatim: no positional
//! transform, and a single softmax spans prefix and native entries.

use crate::error::{Error, Result};
use crate::memory::ReadResult;
use crate::vector::{dot, DenseVector};

/// One window of per-head queries, keys and values: `[head][token]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KvWindow {
    pub queries: Vec<Vec<DenseVector>>,
    pub keys: Vec<Vec<DenseVector>>,
    pub values: Vec<Vec<DenseVector>>,
}

impl KvWindow {
    pub fn new(
        queries: Vec<Vec<DenseVector>>,
        keys: Vec<Vec<DenseVector>>,
        values: Vec<Vec<DenseVector>>,
    ) -> Result<Self> {
        let heads = queries.len();
        if keys.len() != heads || values.len() != heads {
            return Err(Error::InvalidInput("queries, keys and values disagree on head count".into()));
        }
        let len = queries.first().map_or(0, Vec::len);
        let head_dim = queries.first().and_then(|q| q.first()).map_or(0, DenseVector::dim);
        for h in 0..heads {
            if queries[h].len() != len || keys[h].len() != len || values[h].len() != len {
                return Err(Error::InvalidInput(format!("head {h}: window lengths differ")));
            }
            for v in queries[h].iter().chain(&keys[h]) {
                Error::check_dim(head_dim, v.dim())?;
            }
        }
        Ok(Self { queries, keys, values })
    }

    pub fn heads(&self) -> usize {
        self.queries.len()
    }

    pub fn len(&self) -> usize {
        self.queries.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Retrieved prefix followed by the native keys and values.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedKv {
    pub keys: Vec<DenseVector>,
    pub values: Vec<DenseVector>,
    pub prefix_len: usize,
}

impl AugmentedKv {
    pub fn native_len(&self) -> usize {
        self.keys.len() - self.prefix_len
    }
}

/// Concatenates `read` in front of the native keys and values, unchanged.
pub fn augment(native_keys: &[DenseVector], native_values: &[DenseVector], read: &ReadResult) -> Result<AugmentedKv> {
    if native_keys.len() != native_values.len() {
        return Err(Error::InvalidInput("native keys and values differ in length".into()));
    }
    if read.keys.len() != read.values.len() {
        return Err(Error::InvalidInput("retrieved keys and values differ in length".into()));
    }
    let key_dim = native_keys.first().or(read.keys.first()).map_or(0, DenseVector::dim);
    let value_dim = native_values.first().or(read.values.first()).map_or(0, DenseVector::dim);
    for k in read.keys.iter().chain(native_keys) {
        Error::check_dim(key_dim, k.dim())?;
    }
    for v in read.values.iter().chain(native_values) {
        Error::check_dim(value_dim, v.dim())?;
    }
    let keys = read.keys.iter().chain(native_keys).cloned().collect();
    let values = read.values.iter().chain(native_values).cloned().collect();
    Ok(AugmentedKv { keys, values, prefix_len: read.keys.len() })
}

pub fn default_scale(head_dim: usize) -> f64 {
    1.0 / (head_dim as f64).sqrt()
}

/// Softmax weights of each query over the entries it may see.
/// Row `i` has `P + i + 1` entries; masked entries are omitted.
pub fn attention_weights(queries: &[DenseVector], kv: &AugmentedKv, scale: f64) -> Result<Vec<Vec<f64>>> {
    check_shapes(queries, kv, scale)?;
    Ok(queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let visible = kv.prefix_len + i + 1;
            let mut w: Vec<f64> = kv.keys[..visible].iter().map(|k| scale * dot(q, k)).collect();
            softmax_in_place(&mut w);
            w
        })
        .collect())
}

/// Attention outputs `a_1..a_L` for the `L` native queries.
pub fn prefix_causal_attention(queries: &[DenseVector], kv: &AugmentedKv, scale: f64) -> Result<Vec<DenseVector>> {
    let weights = attention_weights(queries, kv, scale)?;
    let value_dim = kv.values.first().map_or(0, DenseVector::dim);
    Ok(weights
        .iter()
        .map(|w| {
            let mut out = vec![0.0; value_dim];
            for (wt, v) in w.iter().zip(&kv.values) {
                for (o, x) in out.iter_mut().zip(v.iter()) {
                    *o += wt * x;
                }
            }
            DenseVector::from_finite(out)
        })
        .collect())
}

/// Runs [`prefix_causal_attention`] per head and concatenates head outputs
/// for each token, in head order.
pub fn attend_heads(window: &KvWindow, reads: &[ReadResult], scale: f64) -> Result<Vec<DenseVector>> {
    if reads.len() != window.heads() {
        return Err(Error::InvalidInput(format!("{} read results for {} heads", reads.len(), window.heads())));
    }
    let mut outputs: Vec<Vec<f64>> = vec![Vec::new(); window.len()];
    for (h, read) in reads.iter().enumerate() {
        let kv = augment(&window.keys[h], &window.values[h], read)?;
        let head_out = prefix_causal_attention(&window.queries[h], &kv, scale)?;
        for (o, a) in outputs.iter_mut().zip(head_out) {
            o.extend_from_slice(&a);
        }
    }
    Ok(outputs.into_iter().map(DenseVector::from_finite).collect())
}

fn check_shapes(queries: &[DenseVector], kv: &AugmentedKv, scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("attention scale {scale} must be positive")));
    }
    if kv.keys.len() != kv.values.len() || kv.prefix_len > kv.keys.len() {
        return Err(Error::InvalidInput("malformed augmented key/value list".into()));
    }
    if kv.native_len() != queries.len() {
        return Err(Error::InvalidInput(format!("{} queries for {} native entries", queries.len(), kv.native_len())));
    }
    if let Some(q) = queries.first() {
        for v in queries.iter().chain(&kv.keys) {
            Error::check_dim(q.dim(), v.dim())?;
        }
    }
    Ok(())
}

/// Numerically stable softmax (max subtraction).
pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}
