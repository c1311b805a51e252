use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::SimilarityKind;

/// Which part of the memory mechanism is switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// Reads return a uniformly random occupied slot per token.
    NoRead,
    /// Novel tokens replace a uniformly random slot instead of the oldest.
    NoRecency,
    /// Every token consolidates into its nearest slot.
    NoNovelty,
    /// Only exact-direction duplicates consolidate; the bank behaves as a FIFO.
    NoConsolidation,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Full, Ablation::NoRead, Ablation::NoRecency, Ablation::NoNovelty, Ablation::NoConsolidation];

    pub fn tag(self) -> u8 {
        match self {
            Ablation::Full => 0,
            Ablation::NoRead => 1,
            Ablation::NoRecency => 2,
            Ablation::NoNovelty => 3,
            Ablation::NoConsolidation => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRead => "no-read",
            Ablation::NoRecency => "no-recency",
            Ablation::NoNovelty => "no-novelty",
            Ablation::NoConsolidation => "no-consolidation",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown ablation '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankConfig {
    /// Number of slots M.
    pub capacity: usize,
    /// Key/value dimension d. Banks attached to a model take the head size.
    #[serde(default)]
    pub dim: usize,
    /// Novelty threshold R.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub similarity: SimilarityKind,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.93;

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl BankConfig {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            threshold: DEFAULT_THRESHOLD,
            similarity: SimilarityKind::Cosine,
            ablation: Ablation::Full,
            seed: 0,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_similarity(mut self, similarity: SimilarityKind) -> Self {
        self.similarity = similarity;
        self
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidConfig("capacity must be at least 1".into()));
        }
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("dimension {} out of range", self.dim)));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!("threshold {} outside [-1, 1]", self.threshold)));
        }
        Ok(())
    }

    /// Threshold actually applied by `write`: a score `>=` this consolidates.
    ///
    /// No-novelty and no-consolidation pin R to -1 and +1. Negative-euclidean
    /// scores live in (-inf, 0], so there R is read as the chord radius
    /// `sqrt(2 (1 - R))` it corresponds to on unit vectors, and the two
    /// ablations map to "always" (-inf) and "exact duplicates only" (0).
    pub fn effective_threshold(&self) -> f64 {
        match (self.ablation, self.similarity) {
            (Ablation::NoNovelty, SimilarityKind::Cosine) => -1.0,
            (Ablation::NoNovelty, SimilarityKind::NegativeEuclidean) => f64::NEG_INFINITY,
            (Ablation::NoConsolidation, SimilarityKind::Cosine) => 1.0,
            (Ablation::NoConsolidation, SimilarityKind::NegativeEuclidean) => 0.0,
            (_, SimilarityKind::Cosine) => self.threshold,
            (_, SimilarityKind::NegativeEuclidean) => -(2.0 * (1.0 - self.threshold)).max(0.0).sqrt(),
        }
    }
}
