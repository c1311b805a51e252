use std::io::Write;

use serde::Serialize;

use super::{generate_stream, MixtureSpec, StreamSample};
use crate::error::{Error, Result};
use crate::memory::{BankConfig, MemoryBank, WriteAction};
use crate::vector::DenseVector;

/// One token write, in stream order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamEvent {
    pub index: usize,
    pub window: usize,
    /// Position of the token in the stream.
    pub token: usize,
    pub action: WriteAction,
    pub slot: usize,
    pub similarity: Option<f64>,
    pub mode: usize,
}

#[derive(Clone, Debug)]
pub struct StreamRun {
    pub bank: MemoryBank,
    pub samples: Vec<StreamSample>,
    pub events: Vec<StreamEvent>,
    pub window: usize,
}

impl StreamRun {
    pub fn write_events_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["event", "window", "token", "action", "slot", "similarity", "mode"])?;
        for e in &self.events {
            w.write_record([
                e.index.to_string(),
                e.window.to_string(),
                e.token.to_string(),
                e.action.name().to_string(),
                e.slot.to_string(),
                e.similarity.map(|s| s.to_string()).unwrap_or_default(),
                e.mode.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generates the whole stream of `spec` and writes it window by window.
pub fn run_memory_on_stream(spec: &MixtureSpec, config: &BankConfig, window: usize) -> Result<StreamRun> {
    let samples = generate_stream(spec, spec.total_len())?;
    run_memory_on_samples(samples, config, window, false)
}

/// Writes `samples` into a fresh bank in windows of `window` tokens. With
/// `read` set, each window is read before it is written; reads only matter to
/// the bank's random stream under the no-read ablation.
pub fn run_memory_on_samples(
    samples: Vec<StreamSample>,
    config: &BankConfig,
    window: usize,
    read: bool,
) -> Result<StreamRun> {
    if window == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    let mut bank = MemoryBank::new(config.clone())?;
    for s in &samples {
        Error::check_dim(config.dim, s.key.dim())?;
        Error::check_dim(config.dim, s.value.dim())?;
    }
    let mut events = Vec::with_capacity(samples.len());
    for (w, chunk) in samples.chunks(window).enumerate() {
        let keys: Vec<DenseVector> = chunk.iter().map(|s| s.key.clone()).collect();
        let values: Vec<DenseVector> = chunk.iter().map(|s| s.value.clone()).collect();
        if read {
            bank.read(&keys)?;
        }
        let report = bank.write(&keys, &values)?;
        for t in report.per_token {
            events.push(StreamEvent {
                index: events.len(),
                window: w,
                token: w * window + t.position,
                action: t.action,
                slot: t.slot,
                similarity: t.similarity,
                mode: chunk[t.position].true_mode,
            });
        }
    }
    Ok(StreamRun { bank, samples, events, window })
}
