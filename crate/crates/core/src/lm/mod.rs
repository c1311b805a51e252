//! Small character-level transformer used to exercise memory banks end to end.

mod corpus;
mod eval;
mod model;
mod ops;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use corpus::{frequency_table, LexiconSpec, Vocab};
pub use eval::{
    eval_clm, eval_clm_documents, eval_clm_with_banks, eval_icl, freq_bucket_report, process_window_clm, setup_for,
    BankSet, BucketRow, EvalReport, IclOutcome, MemorySetup, ProtocolEvent, ProtocolStep, TokenScore, WindowOptions,
    WindowOutcome, WindowRow, DEFAULT_BUCKET_EDGES,
};
pub use model::{next_token_nll, AttentionHook, Model, ModelShape, PlainAttention};
pub use train::{train_lm, TrainConfig, TrainLog};

use crate::error::{Error, Result};
use crate::memory::BankConfig;

/// Architecture, memory placement and training hyperparameters together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub shape: ModelShape,
    /// Evaluation window length L.
    pub window: usize,
    pub augmented_layers: Vec<usize>,
    /// Applied to every augmented (layer, head); `dim` is set from the model.
    pub bank: BankConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.memory_setup().validate(&self.shape)?;
        if self.train.seq_len > self.shape.max_len {
            return Err(Error::InvalidConfig("training seq_len exceeds max_len".into()));
        }
        Ok(())
    }

    pub fn memory_setup(&self) -> MemorySetup {
        MemorySetup::new(self.window, self.augmented_layers.clone(), self.bank.clone())
    }

    /// Two layers, width 32, two heads, 128 positions, memory on both layers.
    pub fn small(vocab: usize) -> Self {
        let shape = ModelShape { vocab, d_model: 32, heads: 2, layers: 2, d_ff: 128, max_len: 128 };
        let mut bank = BankConfig::new(512, shape.head_dim()).with_threshold(0.9);
        bank.seed = 0;
        Self { shape, window: 64, augmented_layers: vec![0, 1], bank, train: TrainConfig::default() }
    }
}

/// A trained model with its vocabulary and training-set token frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub vocab: Vocab,
    pub model: Model,
    pub frequencies: Vec<u64>,
    pub train: TrainConfig,
}

impl ModelArtifact {
    /// Builds the vocabulary from `text`, trains, and records frequencies.
    pub fn train(text: &str, shape: ModelShape, train: &TrainConfig) -> Result<(Self, TrainLog)> {
        if text.is_empty() {
            return Err(Error::InvalidInput("empty training corpus".into()));
        }
        let vocab = Vocab::from_text(text);
        if shape.vocab != vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "model vocabulary {} does not match the corpus's {} characters",
                shape.vocab,
                vocab.len()
            )));
        }
        let tokens = vocab.encode(text)?;
        let (model, log) = train_lm(shape, &tokens, train)?;
        let frequencies = frequency_table(&tokens, vocab.len());
        Ok((Self { vocab, model, frequencies, train: train.clone() }, log))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
