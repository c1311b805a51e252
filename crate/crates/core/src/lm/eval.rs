//! Windowed evaluation with per-(layer, head) memory banks.
//!
//! Causal LM: a document is cut into non-overlapping windows of `L` tokens.
//! In every augmented layer each head reads its bank with the window's native
//! keys, attends over the retrieved prefix plus the window, then writes the
//! window's keys and values back. Few-shot prompts first write the example
//! windows without reading, then score each option with reads enabled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{next_token_nll, AttentionHook, Model, ModelShape};
use crate::attention::{augment, prefix_causal_attention};
use crate::error::{Error, Result};
use crate::memory::{Ablation, BankConfig, MemoryBank, ReadOptions, ReadResult, WriteReport};
use crate::vector::DenseVector;

/// Which layers get memory, and how their banks are configured. `dim` of
/// `bank` is replaced by the model's head dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySetup {
    pub window: usize,
    /// Augmented layers; empty means the plain windowed model.
    pub layers: Vec<usize>,
    pub bank: BankConfig,
    #[serde(default = "yes")]
    pub read: bool,
    #[serde(default = "yes")]
    pub write: bool,
    #[serde(default)]
    pub dedupe: bool,
}

fn yes() -> bool {
    true
}

impl MemorySetup {
    pub fn new(window: usize, layers: Vec<usize>, bank: BankConfig) -> Self {
        Self { window, layers, bank, read: true, write: true, dedupe: false }
    }

    /// Memory on every layer of `shape`.
    pub fn all_layers(shape: &ModelShape, window: usize, bank: BankConfig) -> Self {
        Self::new(window, (0..shape.layers).collect(), bank)
    }

    /// The plain windowed model.
    pub fn baseline(window: usize) -> Self {
        Self::new(window, Vec::new(), BankConfig::new(1, 1))
    }

    pub fn is_baseline(&self) -> bool {
        self.layers.is_empty()
    }

    /// Name used in reports: the ablation, or `none` for the plain model.
    pub fn label(&self) -> String {
        if self.is_baseline() {
            "none".into()
        } else {
            self.bank.ablation.name().into()
        }
    }

    pub fn validate(&self, shape: &ModelShape) -> Result<()> {
        if self.window == 0 || self.window > shape.max_len {
            return Err(Error::InvalidConfig(format!("window {} outside 1..={}", self.window, shape.max_len)));
        }
        if let Some(l) = self.layers.iter().find(|&&l| l >= shape.layers) {
            return Err(Error::InvalidConfig(format!("augmented layer {l} >= {} layers", shape.layers)));
        }
        Ok(())
    }
}

/// One bank per (augmented layer, head).
#[derive(Clone, Debug)]
pub struct BankSet {
    layers: Vec<usize>,
    heads: usize,
    banks: Vec<MemoryBank>,
}

impl BankSet {
    pub fn new(shape: &ModelShape, setup: &MemorySetup) -> Result<Self> {
        setup.validate(shape)?;
        let mut layers = setup.layers.clone();
        layers.sort_unstable();
        layers.dedup();
        let mut banks = Vec::with_capacity(layers.len() * shape.heads);
        for i in 0..layers.len() * shape.heads {
            let mut cfg = setup.bank.clone();
            cfg.dim = shape.head_dim();
            cfg.seed = setup.bank.seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            banks.push(MemoryBank::new(cfg)?);
        }
        Ok(Self { layers, heads: shape.heads, banks })
    }

    fn index(&self, layer: usize, head: usize) -> Option<usize> {
        let pos = self.layers.iter().position(|&l| l == layer)?;
        (head < self.heads).then_some(pos * self.heads + head)
    }

    pub fn get(&self, layer: usize, head: usize) -> Option<&MemoryBank> {
        self.index(layer, head).map(|i| &self.banks[i])
    }

    pub fn get_mut(&mut self, layer: usize, head: usize) -> Option<&mut MemoryBank> {
        self.index(layer, head).map(move |i| &mut self.banks[i])
    }

    /// `(layer, head, bank)` in layer-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &MemoryBank)> {
        self.banks.iter().enumerate().map(move |(i, b)| (self.layers[i / self.heads], i % self.heads, b))
    }

    pub fn len(&self) -> usize {
        self.banks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banks.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.banks.iter().map(MemoryBank::total_count).sum()
    }

    pub fn enable_slot_logs(&mut self) {
        self.banks.iter_mut().for_each(MemoryBank::enable_slot_log);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolStep {
    Read,
    Write,
}

/// One bank access, recorded in the order it happened.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolEvent {
    pub window: usize,
    pub layer: usize,
    pub head: usize,
    pub step: ProtocolStep,
    /// Retrieved prefix length for reads, tokens written for writes.
    pub size: usize,
    /// Instances destroyed by evictions (writes only).
    pub destroyed: u64,
}

struct MemoryAttention<'a> {
    banks: &'a mut BankSet,
    read: bool,
    write: bool,
    dedupe: bool,
    window: usize,
    labels: Option<&'a [String]>,
    events: &'a mut Vec<ProtocolEvent>,
}

impl AttentionHook for MemoryAttention<'_> {
    fn attend(
        &mut self,
        layer: usize,
        head: usize,
        queries: &[DenseVector],
        keys: &[DenseVector],
        values: &[DenseVector],
        scale: f64,
    ) -> Result<Vec<DenseVector>> {
        let Some(bank) = self.banks.get_mut(layer, head) else {
            let kv = augment(keys, values, &ReadResult::default())?;
            return prefix_causal_attention(queries, &kv, scale);
        };
        let read = if self.read {
            let r = bank.read_with(keys, ReadOptions { dedupe: self.dedupe })?;
            self.events.push(ProtocolEvent {
                window: self.window,
                layer,
                head,
                step: ProtocolStep::Read,
                size: r.len(),
                destroyed: 0,
            });
            r
        } else {
            ReadResult::default()
        };
        let kv = augment(keys, values, &read)?;
        let out = prefix_causal_attention(queries, &kv, scale)?;
        if self.write {
            let report: WriteReport = match self.labels {
                Some(labels) => bank.write_labeled(keys, values, labels)?,
                None => bank.write(keys, values)?,
            };
            self.events.push(ProtocolEvent {
                window: self.window,
                layer,
                head,
                step: ProtocolStep::Write,
                size: keys.len(),
                destroyed: report.destroyed_count(),
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WindowOptions {
    pub read: bool,
    pub write: bool,
    pub dedupe: bool,
}

impl WindowOptions {
    fn from_setup(setup: &MemorySetup) -> Self {
        Self { read: setup.read, write: setup.write, dedupe: setup.dedupe }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutcome {
    /// NLL of `tokens[i + 1]` for each `i` in the window.
    pub nll: Vec<f64>,
    pub events: Vec<ProtocolEvent>,
}

/// Runs one window through the model with memory: read, augment, then write,
/// for every augmented (layer, head). Returns next-token NLLs.
pub fn process_window_clm(
    model: &Model,
    banks: &mut BankSet,
    tokens: &[u32],
    window_index: usize,
    options: WindowOptions,
    labels: Option<&[String]>,
) -> Result<WindowOutcome> {
    let mut events = Vec::new();
    let mut hook = MemoryAttention {
        banks,
        read: options.read,
        write: options.write,
        dedupe: options.dedupe,
        window: window_index,
        labels,
        events: &mut events,
    };
    let logits = model.forward_with(tokens, &mut hook)?;
    Ok(WindowOutcome { nll: next_token_nll(&logits, tokens, model.shape().vocab), events })
}

/// A scored target token.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TokenScore {
    pub token: u32,
    pub nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub index: usize,
    /// Scored tokens in the window.
    pub tokens: usize,
    /// Mean NLL over the scored tokens (0 when there are none).
    pub nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub label: String,
    pub min_freq: u64,
    /// Exclusive upper bound; `None` for the open top bucket.
    pub max_freq: Option<u64>,
    pub tokens: usize,
    pub mean_nll: Option<f64>,
    pub perplexity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub ablation: String,
    pub window: usize,
    pub per_window: Vec<WindowRow>,
    pub mean_nll: f64,
    pub perplexity: f64,
    pub buckets: Vec<BucketRow>,
    #[serde(skip)]
    pub trace: Vec<TokenScore>,
    #[serde(skip)]
    pub events: Vec<ProtocolEvent>,
}

impl EvalReport {
    fn from_windows(setup: &MemorySetup, windows: Vec<(Vec<u32>, Vec<f64>)>, events: Vec<ProtocolEvent>) -> Self {
        let mut per_window = Vec::with_capacity(windows.len());
        let mut trace = Vec::new();
        for (index, (tokens, nll)) in windows.into_iter().enumerate() {
            let mean = if nll.is_empty() { 0.0 } else { nll.iter().sum::<f64>() / nll.len() as f64 };
            per_window.push(WindowRow { index, tokens: nll.len(), nll: mean });
            trace.extend(nll.iter().enumerate().map(|(i, &n)| TokenScore { token: tokens[i + 1], nll: n }));
        }
        let mean_nll =
            if trace.is_empty() { 0.0 } else { trace.iter().map(|t| t.nll).sum::<f64>() / trace.len() as f64 };
        Self {
            config_digest: String::new(),
            ablation: setup.label(),
            window: setup.window,
            per_window,
            mean_nll,
            perplexity: mean_nll.exp(),
            buckets: Vec::new(),
            trace,
            events,
        }
    }

    pub fn scored_tokens(&self) -> usize {
        self.trace.len()
    }

    /// CSV rows `index,tokens,nll`.
    pub fn write_windows_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "tokens", "nll"])?;
        for row in &self.per_window {
            w.write_record([row.index.to_string(), row.tokens.to_string(), format!("{:.17e}", row.nll)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates a document with fresh banks.
pub fn eval_clm(model: &Model, document: &[u32], setup: &MemorySetup) -> Result<EvalReport> {
    let mut banks = BankSet::new(model.shape(), setup)?;
    eval_clm_with_banks(model, document, setup, &mut banks, None)
}

/// Evaluates a document against caller-owned banks (for carrying memory
/// across documents or collecting slot logs). `labels` gives one label per
/// document token for the slot logs.
pub fn eval_clm_with_banks(
    model: &Model,
    document: &[u32],
    setup: &MemorySetup,
    banks: &mut BankSet,
    labels: Option<&[String]>,
) -> Result<EvalReport> {
    setup.validate(model.shape())?;
    if document.len() < 2 {
        return Err(Error::InvalidInput("document needs at least two tokens".into()));
    }
    if labels.is_some_and(|l| l.len() != document.len()) {
        return Err(Error::InvalidInput("one label per document token required".into()));
    }
    let options = WindowOptions::from_setup(setup);
    let mut windows = Vec::new();
    let mut events = Vec::new();
    for (index, chunk) in document.chunks(setup.window).enumerate() {
        let start = index * setup.window;
        let chunk_labels = labels.map(|l| &l[start..start + chunk.len()]);
        let out = process_window_clm(model, banks, chunk, index, options, chunk_labels)?;
        events.extend(out.events);
        windows.push((chunk.to_vec(), out.nll));
    }
    Ok(EvalReport::from_windows(setup, windows, events))
}

/// Independent documents with fresh banks each, evaluated in parallel.
pub fn eval_clm_documents(model: &Model, documents: &[Vec<u32>], setup: &MemorySetup) -> Result<Vec<EvalReport>> {
    documents.par_iter().map(|d| eval_clm(model, d, setup)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IclOutcome {
    pub chosen: usize,
    pub option_perplexities: Vec<f64>,
    #[serde(skip)]
    pub prefill_events: Vec<ProtocolEvent>,
    #[serde(skip)]
    pub scoring_events: Vec<ProtocolEvent>,
    /// Sum of slot counts over all banks after the prefill.
    pub prefill_total_count: u64,
}

/// Few-shot scoring: example windows are written (no reads), then each option
/// continuing `question` is scored with reads and no writes. The option with
/// the lowest perplexity wins; ties go to the lowest index.
pub fn eval_icl(
    model: &Model,
    examples: &[Vec<u32>],
    question: &[u32],
    options: &[Vec<u32>],
    setup: &MemorySetup,
) -> Result<IclOutcome> {
    if options.is_empty() {
        return Err(Error::InvalidInput("at least one option is required".into()));
    }
    let mut banks = BankSet::new(model.shape(), setup)?;
    let mut prefill_events = Vec::new();
    let prefill = WindowOptions { read: false, write: setup.write, dedupe: false };
    let mut window = 0;
    for example in examples {
        for chunk in example.chunks(setup.window) {
            let out = process_window_clm(model, &mut banks, chunk, window, prefill, None)?;
            prefill_events.extend(out.events);
            window += 1;
        }
    }
    let prefill_total_count = banks.total_count();

    let scoring = WindowOptions { read: setup.read, write: false, dedupe: setup.dedupe };
    let mut scoring_events = Vec::new();
    let mut option_perplexities = Vec::with_capacity(options.len());
    for option in options {
        if option.is_empty() {
            return Err(Error::InvalidInput("options must be non-empty".into()));
        }
        let mut seq: Vec<u32> = question.iter().chain(option).copied().collect();
        if seq.len() > setup.window {
            seq.drain(..seq.len() - setup.window);
        }
        let first_target = seq.len() - option.len().min(seq.len());
        let mut scratch = banks.clone();
        let out = process_window_clm(model, &mut scratch, &seq, window, scoring, None)?;
        scoring_events.extend(out.events);
        let scored: Vec<f64> =
            out.nll.iter().enumerate().filter(|(i, _)| i + 1 >= first_target.max(1)).map(|(_, n)| *n).collect();
        if scored.is_empty() {
            return Err(Error::InvalidInput("option has no scorable tokens (empty question?)".into()));
        }
        option_perplexities.push((scored.iter().sum::<f64>() / scored.len() as f64).exp());
    }
    let mut chosen = 0;
    for (i, &p) in option_perplexities.iter().enumerate() {
        if p < option_perplexities[chosen] {
            chosen = i;
        }
    }
    Ok(IclOutcome { chosen, option_perplexities, prefill_events, scoring_events, prefill_total_count })
}

/// Default bucket edges: <100, 100-1K, 1K-10K, >=10K occurrences.
pub const DEFAULT_BUCKET_EDGES: [u64; 3] = [100, 1_000, 10_000];

fn fmt_count(n: u64) -> String {
    if n >= 1_000 && n.is_multiple_of(1_000) {
        format!("{}K", n / 1_000)
    } else {
        n.to_string()
    }
}

/// Per-bucket perplexity by training-set frequency. Buckets are half-open
/// `[edge_i, edge_i+1)`, listed from most to least frequent. Tokens without a
/// frequency entry fall in the lowest bucket.
pub fn freq_bucket_report(trace: &[TokenScore], frequencies: &[u64], edges: &[u64]) -> Result<Vec<BucketRow>> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!("bucket edges {edges:?} are not strictly increasing")));
    }
    let n = edges.len() + 1;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for t in trace {
        let f = frequencies.get(t.token as usize).copied().unwrap_or(0);
        let b = edges.iter().take_while(|&&e| f >= e).count();
        sums[b] += t.nll;
        counts[b] += 1;
    }
    let mut rows = Vec::with_capacity(n);
    for b in (0..n).rev() {
        let min_freq = if b == 0 { 0 } else { edges[b - 1] };
        let max_freq = edges.get(b).copied();
        let label = match (b, max_freq) {
            (0, Some(hi)) => format!("<{}", fmt_count(hi)),
            (_, None) => format!(">={}", fmt_count(min_freq)),
            (_, Some(hi)) => format!("{}-{}", fmt_count(min_freq), fmt_count(hi)),
        };
        let mean_nll = (counts[b] > 0).then(|| sums[b] / counts[b] as f64);
        rows.push(BucketRow {
            label,
            min_freq,
            max_freq,
            tokens: counts[b],
            mean_nll,
            perplexity: mean_nll.map(f64::exp),
        });
    }
    Ok(rows)
}

/// Everything that distinguishes an ablation run, for sweeps and the CLI.
pub fn setup_for(base: &MemorySetup, ablation: Option<Ablation>) -> MemorySetup {
    match ablation {
        None => MemorySetup { layers: Vec::new(), ..base.clone() },
        Some(a) => {
            let mut s = base.clone();
            s.bank.ablation = a;
            s
        }
    }
}
