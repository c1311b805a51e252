//! Synthetic key/value streams drawn from a phased Gaussian mixture, and the
//! oracles that check a memory bank against them.
//!
//! Modes are numbered globally: phase 0's means first, then phase 1's, and so
//! on. A sample's `true_mode` is that global index.

mod oracle;
mod run;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::DenseVector;

pub use oracle::{
    fifo_oracle_check, full_attention_oracle, mode_recovery_metrics, FifoCheck, FifoDivergence, FullAttentionReport,
    ModeMatch, RecoveryReport, MAX_ORACLE_HISTORY,
};
pub use run::{run_memory_on_samples, run_memory_on_stream, StreamEvent, StreamRun};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub means: Vec<DenseVector>,
    pub weights: Vec<f64>,
    /// Isotropic noise standard deviation added to every key coordinate.
    pub sigma: f64,
    pub length: usize,
}

/// How sample values are produced from their mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueRule {
    /// One value per global mode. When absent, mode `m` maps to the basis
    /// vector `e_(m mod d)` scaled by `1 + m / d`.
    pub table: Option<Vec<DenseVector>>,
    /// Add the phase's key noise to values as well.
    pub noisy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub values: ValueRule,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSample {
    pub key: DenseVector,
    pub value: DenseVector,
    pub true_mode: usize,
    pub phase: usize,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::InvalidConfig("mixture has no phases".into()));
        }
        let dim = self.dim();
        for (p, phase) in self.phases.iter().enumerate() {
            if phase.means.is_empty() {
                return Err(Error::InvalidConfig(format!("phase {p} has no modes")));
            }
            if phase.weights.len() != phase.means.len() {
                return Err(Error::InvalidConfig(format!(
                    "phase {p}: {} weights for {} modes",
                    phase.weights.len(),
                    phase.means.len()
                )));
            }
            if phase.weights.iter().any(|w| !w.is_finite() || *w < 0.0)
                || (phase.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
            {
                return Err(Error::InvalidConfig(format!("phase {p}: weights must form a simplex")));
            }
            if !phase.sigma.is_finite() || phase.sigma < 0.0 {
                return Err(Error::InvalidConfig(format!("phase {p}: sigma must be finite and >= 0")));
            }
            if let Some(m) = phase.means.iter().find(|m| m.dim() != dim) {
                return Err(Error::DimensionMismatch { expected: dim, found: m.dim() });
            }
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("mode means must be non-empty".into()));
        }
        if let Some(table) = &self.values.table {
            if table.len() != self.num_modes() {
                return Err(Error::InvalidConfig(format!(
                    "value table has {} entries for {} modes",
                    table.len(),
                    self.num_modes()
                )));
            }
            if let Some(v) = table.iter().find(|v| v.dim() != table[0].dim()) {
                return Err(Error::DimensionMismatch { expected: table[0].dim(), found: v.dim() });
            }
        }
        Ok(())
    }

    /// Key dimension, taken from the first mode.
    pub fn dim(&self) -> usize {
        self.phases.first().and_then(|p| p.means.first()).map_or(0, |m| m.dim())
    }

    pub fn value_dim(&self) -> usize {
        match &self.values.table {
            Some(t) if !t.is_empty() => t[0].dim(),
            _ => self.dim(),
        }
    }

    pub fn num_modes(&self) -> usize {
        self.phases.iter().map(|p| p.means.len()).sum()
    }

    pub fn total_len(&self) -> usize {
        self.phases.iter().map(|p| p.length).sum()
    }

    /// Mean of global mode `m`.
    pub fn mode_mean(&self, mut m: usize) -> Option<&DenseVector> {
        for phase in &self.phases {
            if m < phase.means.len() {
                return Some(&phase.means[m]);
            }
            m -= phase.means.len();
        }
        None
    }

    /// Noise-free value of global mode `m`.
    pub fn mode_value(&self, m: usize) -> DenseVector {
        if let Some(t) = &self.values.table {
            return t[m].clone();
        }
        let d = self.dim();
        let mut v = vec![0.0; d];
        v[m % d] = 1.0 + (m / d) as f64;
        DenseVector::from_finite(v)
    }
}

/// Draws the first `n` samples of the stream, phase by phase.
pub fn generate_stream(spec: &MixtureSpec, n: usize) -> Result<Vec<StreamSample>> {
    spec.validate()?;
    if n > spec.total_len() {
        return Err(Error::InvalidInput(format!("{n} samples requested from a stream of {}", spec.total_len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(n);
    let mut offset = 0;
    for (p, phase) in spec.phases.iter().enumerate() {
        let pick = WeightedIndex::new(&phase.weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let noise = Normal::new(0.0, phase.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for _ in 0..phase.length {
            if out.len() == n {
                return Ok(out);
            }
            let local = pick.sample(&mut rng);
            let mode = offset + local;
            let mut key = phase.means[local].as_slice().to_vec();
            for x in &mut key {
                *x += noise.sample(&mut rng);
            }
            let mut value = spec.mode_value(mode).into_inner();
            if spec.values.noisy {
                for x in &mut value {
                    *x += noise.sample(&mut rng);
                }
            }
            out.push(StreamSample {
                key: DenseVector::new(key)?,
                value: DenseVector::new(value)?,
                true_mode: mode,
                phase: p,
            });
        }
        offset += phase.means.len();
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn basis(d: usize, i: usize) -> DenseVector {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        DenseVector::new(v).unwrap()
    }

    pub(crate) fn one_phase(d: usize, modes: usize, sigma: f64, length: usize) -> MixtureSpec {
        MixtureSpec {
            phases: vec![Phase {
                means: (0..modes).map(|i| basis(d, i)).collect(),
                weights: vec![1.0 / modes as f64; modes],
                sigma,
                length,
            }],
            values: ValueRule::default(),
            seed: 7,
        }
    }

    #[test]
    fn zero_noise_keys_are_exact() {
        let spec = one_phase(3, 3, 0.0, 9);
        for s in generate_stream(&spec, 9).unwrap() {
            assert_eq!(&s.key, spec.mode_mean(s.true_mode).unwrap());
            assert_eq!(s.value, spec.mode_value(s.true_mode));
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let spec = one_phase(4, 3, 0.2, 50);
        assert_eq!(generate_stream(&spec, 50).unwrap(), generate_stream(&spec, 50).unwrap());
        let mut other = spec.clone();
        other.seed = 8;
        assert_ne!(generate_stream(&spec, 50).unwrap(), generate_stream(&other, 50).unwrap());
    }

    #[test]
    fn degenerate_weights() {
        let mut spec = one_phase(3, 3, 0.1, 40);
        spec.phases[0].weights = vec![1.0, 0.0, 0.0];
        assert!(generate_stream(&spec, 40).unwrap().iter().all(|s| s.true_mode == 0));
    }

    #[test]
    fn phases_and_labels() {
        let mut spec = one_phase(4, 2, 0.0, 5);
        spec.phases.push(Phase {
            means: vec![basis(4, 2), basis(4, 3)],
            weights: vec![0.5, 0.5],
            sigma: 0.0,
            length: 5,
        });
        let s = generate_stream(&spec, 8).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s[..5].iter().all(|x| x.phase == 0 && x.true_mode < 2));
        assert!(s[5..].iter().all(|x| x.phase == 1 && x.true_mode >= 2));
        assert!(generate_stream(&spec, 11).is_err());
    }

    #[test]
    fn noise_has_the_requested_spread() {
        let spec = one_phase(4, 1, 0.5, 4000);
        let s = generate_stream(&spec, 4000).unwrap();
        let dev: Vec<f64> =
            s.iter().flat_map(|x| (0..4).map(|j| x.key[j] - spec.phases[0].means[0][j]).collect::<Vec<_>>()).collect();
        let mean = dev.iter().sum::<f64>() / dev.len() as f64;
        let var = dev.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / dev.len() as f64;
        // 16,000 draws: the standard errors are about 0.004 and 0.003
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var.sqrt() - 0.5).abs() < 0.02, "{}", var.sqrt());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = one_phase(3, 2, 0.0, 4);
        spec.phases[0].weights = vec![0.5, 0.6];
        assert!(spec.validate().is_err());
        let mut spec = one_phase(3, 2, 0.0, 4);
        spec.phases[0].means[1] = basis(4, 0);
        assert!(matches!(spec.validate(), Err(Error::DimensionMismatch { .. })));
        let spec = MixtureSpec { phases: vec![], values: ValueRule::default(), seed: 0 };
        assert!(generate_stream(&spec, 0).is_err());
        let mut spec = one_phase(3, 2, -1.0, 4);
        assert!(spec.validate().is_err());
        spec.phases[0].sigma = 0.0;
        spec.values.table = Some(vec![basis(2, 0)]);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = one_phase(3, 2, 0.1, 4);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<MixtureSpec>(&text).unwrap(), spec);
        let minimal = r#"{"phases":[{"means":[[1,0]],"weights":[1],"sigma":0,"length":3}]}"#;
        assert_eq!(serde_json::from_str::<MixtureSpec>(minimal).unwrap().total_len(), 3);
    }
}
