use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{next_token_loss_grad, Model, ModelShape};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Length of each training sequence; at most the model's `max_len`.
    pub seq_len: usize,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 600, learning_rate: 3e-3, batch_size: 8, seq_len: 128, warmup_steps: 30, grad_clip: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainLog {
    /// Mean next-token NLL per step.
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean of the last `n` step losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len().saturating_sub(n)..].iter().sum::<f64>() / n as f64
    }
}

fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.learning_rate * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let span = (cfg.steps - cfg.warmup_steps).max(1) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    // cosine decay to a tenth of the peak rate
    cfg.learning_rate * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Trains a fresh model on random contiguous slices of `corpus`.
///
/// Deterministic for a given seed: per-sequence gradients may be computed in
/// parallel but are summed in batch order.
pub fn train_lm(shape: ModelShape, corpus: &[u32], cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    shape.validate()?;
    if corpus.len() < 2 {
        return Err(Error::InvalidInput("training corpus needs at least two tokens".into()));
    }
    if let Some(&t) = corpus.iter().find(|&&t| t as usize >= shape.vocab) {
        return Err(Error::InvalidInput(format!("corpus token {t} outside vocabulary of {}", shape.vocab)));
    }
    if cfg.batch_size == 0 || cfg.seq_len < 2 || cfg.seq_len > shape.max_len {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} / seq_len {} invalid for max_len {}",
            cfg.batch_size, cfg.seq_len, shape.max_len
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(shape, rng.random())?;
    let n = model.num_params();
    let (beta1, beta2, eps) = (0.9f64, 0.99f64, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut log = TrainLog::default();
    let seq_len = cfg.seq_len.min(corpus.len());
    let vocab = model.shape().vocab;

    for step in 0..cfg.steps {
        let starts: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..=corpus.len() - seq_len)).collect();
        let norm = (cfg.batch_size * (seq_len - 1)) as f64;
        let per_seq: Vec<(f64, Vec<f64>)> = starts
            .par_iter()
            .map(|&s| {
                let tokens = &corpus[s..s + seq_len];
                let (logits, cache) = model.forward_cached(tokens).expect("validated tokens");
                let (loss, dlogits) = next_token_loss_grad(&logits, tokens, vocab, norm);
                let mut g = vec![0.0; n];
                model.backward(&cache, &dlogits, &mut g);
                (loss, g)
            })
            .collect();

        let mut grads = vec![0.0; n];
        let mut loss = 0.0;
        for (l, g) in &per_seq {
            loss += l;
            for (a, b) in grads.iter_mut().zip(g) {
                *a += b;
            }
        }
        log.losses.push(loss / norm);

        let gnorm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if gnorm > cfg.grad_clip { cfg.grad_clip / gnorm } else { 1.0 };
        let lr = lr_at(cfg, step);
        let (bc1, bc2) = (1.0 - beta1.powi(step as i32 + 1), 1.0 - beta2.powi(step as i32 + 1));
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            let g = grads[i] * clip;
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            *p -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        }
        if !loss.is_finite() {
            return Err(Error::InvalidInput(format!("training diverged at step {step}")));
        }
    }
    Ok((model, log))
}
