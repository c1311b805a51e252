use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{derive_seed, load, Loaded};
use super::{create_out, write_json, Axis, Common, Failure, Timing};
use crate::lm::{
    eval_clm_documents, eval_clm_with_banks, freq_bucket_report, BankSet, EvalReport, LexiconSpec, MemorySetup,
    ModelArtifact, ModelShape, TrainConfig, Vocab, WindowRow, DEFAULT_BUCKET_EDGES,
};
use crate::memory::{Ablation, BankConfig};
use crate::vector::SimilarityKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrainCorpus {
    /// A UTF-8 text file, relative paths resolved against the config file.
    File { path: PathBuf },
    Lexicon {
        #[serde(default)]
        lexicon: LexiconSpec,
        chars: usize,
        doc_len: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    /// `vocab` is taken from the corpus.
    pub shape: ModelShape,
    #[serde(default)]
    pub train: TrainConfig,
    pub corpus: TrainCorpus,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EvalCorpus {
    /// One document per non-empty line.
    File { path: PathBuf },
    /// A passage of lexicon words repeated back to back.
    Repetition {
        #[serde(default)]
        lexicon: LexiconSpec,
        passage_len: usize,
        repeats: usize,
        words: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepValues {
    #[serde(rename = "R", alias = "r")]
    pub threshold: Vec<f64>,
    pub memory: Vec<usize>,
    pub similarity: Vec<SimilarityKind>,
    pub window: Vec<usize>,
    /// Ablation every sweep row runs with.
    pub ablation: Option<String>,
}

fn default_ablations() -> Vec<String> {
    vec!["none".into(), "full".into()]
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmdConfig {
    /// Trained model artifact (JSON).
    pub model: PathBuf,
    pub corpus: EvalCorpus,
    pub window: usize,
    /// Augmented layers; all layers when absent.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    pub bank: BankConfig,
    /// `none` for the plain model, otherwise an ablation name.
    #[serde(default = "default_ablations")]
    pub ablations: Vec<String>,
    /// Fresh banks for every document.
    #[serde(default = "yes")]
    pub reset: bool,
    #[serde(default)]
    pub dedupe: bool,
    #[serde(default)]
    pub bucket_edges: Option<Vec<u64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sweep: SweepValues,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn path_value(p: &Path) -> Value {
    // flag paths are relative to the working directory, not the config
    json!(std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()))
}

pub fn train(path: &Path, common: &Common, corpus: Option<PathBuf>, steps: Option<usize>) -> Result<(), Failure> {
    let start = Instant::now();
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(("/seed", json!(s)));
    }
    if let Some(c) = &corpus {
        overrides.push(("/corpus", json!({"kind": "file", "path": path_value(c)})));
    }
    if let Some(s) = steps {
        overrides.push(("/train/steps", json!(s)));
    }
    let loaded: Loaded<TrainCmdConfig> = load(path, overrides)?;
    let mut cfg = loaded.config;
    if let Some(seed) = cfg.seed {
        cfg.train.seed = derive_seed(seed, "train");
        if let TrainCorpus::Lexicon { seed: s, .. } = &mut cfg.corpus {
            *s = derive_seed(seed, "stream");
        }
    }
    let text = match &cfg.corpus {
        TrainCorpus::File { path: p } => {
            let p = resolve(path, p);
            std::fs::read_to_string(&p)
                .with_context(|| format!("reading corpus {}", p.display()))
                .map_err(Failure::Usage)?
        }
        TrainCorpus::Lexicon { lexicon, chars, doc_len, seed } => lexicon.corpus(*seed, *chars, *doc_len)?,
    };
    let mut shape = cfg.shape.clone();
    shape.vocab = Vocab::from_text(&text).len();
    let (artifact, log) = ModelArtifact::train(&text, shape, &cfg.train)?;

    create_out(&common.out)?;
    write_json(&common.out.join("config.json"), &loaded.json)?;
    artifact.save(&common.out.join("model.json"))?;
    let report = json!({
        "config_digest": loaded.digest,
        "vocab": artifact.vocab.len(),
        "parameters": artifact.model.num_params(),
        "final_loss": log.tail_mean(20),
        "uniform_loss": (artifact.vocab.len() as f64).ln(),
        "losses": log.losses,
        "timing": Timing::since(start, common),
    });
    write_json(&common.out.join("train.json"), &report)?;
    println!(
        "trained {} parameters, loss {:.4} (uniform {:.4})",
        artifact.model.num_params(),
        log.tail_mean(20),
        (artifact.vocab.len() as f64).ln()
    );
    Ok(())
}

pub struct EvalOverrides {
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub ablation: Option<Vec<String>>,
    pub windows: Option<usize>,
    pub memory: Option<usize>,
    pub threshold: Option<f64>,
    pub no_reset: bool,
}

fn load_eval(path: &Path, common: &Common, o: &EvalOverrides) -> Result<Loaded<EvalCmdConfig>, Failure> {
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(("/seed", json!(s)));
    }
    if let Some(m) = &o.model {
        overrides.push(("/model", path_value(m)));
    }
    if let Some(c) = &o.corpus {
        overrides.push(("/corpus", json!({"kind": "file", "path": path_value(c)})));
    }
    if let Some(a) = &o.ablation {
        overrides.push(("/ablations", json!(a)));
    }
    if let Some(w) = o.windows {
        overrides.push(("/window", json!(w)));
    }
    if let Some(m) = o.memory {
        overrides.push(("/bank/capacity", json!(m)));
    }
    if let Some(r) = o.threshold {
        overrides.push(("/bank/threshold", json!(r)));
    }
    if o.no_reset {
        overrides.push(("/reset", json!(false)));
    }
    let mut loaded: Loaded<EvalCmdConfig> = load(path, overrides)?;
    let cfg = &mut loaded.config;
    cfg.model = resolve(path, &cfg.model);
    if let EvalCorpus::File { path: p } = &mut cfg.corpus {
        *p = resolve(path, p);
    }
    if let Some(seed) = cfg.seed {
        cfg.bank.seed = derive_seed(seed, "ablation");
        if let EvalCorpus::Repetition { seed: s, .. } = &mut cfg.corpus {
            *s = derive_seed(seed, "stream");
        }
    }
    Ok(loaded)
}

struct EvalInputs {
    artifact: ModelArtifact,
    documents: Vec<Vec<u32>>,
    /// Printable token labels, per document.
    labels: Vec<Vec<String>>,
}

fn inputs(cfg: &EvalCmdConfig) -> Result<EvalInputs, Failure> {
    let artifact = ModelArtifact::load(&cfg.model)
        .with_context(|| format!("loading model {}", cfg.model.display()))
        .map_err(Failure::Usage)?;
    let texts: Vec<String> = match &cfg.corpus {
        EvalCorpus::File { path } => std::fs::read_to_string(path)
            .with_context(|| format!("reading corpus {}", path.display()))
            .map_err(Failure::Usage)?
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        EvalCorpus::Repetition { lexicon, passage_len, repeats, words, seed } => {
            vec![lexicon.repetition_document(*seed, *passage_len, *repeats, *words)?]
        }
    };
    let mut documents = Vec::new();
    let mut labels = Vec::new();
    for t in texts.iter().filter(|t| t.chars().count() >= 2) {
        let ids = artifact.vocab.encode(t)?;
        labels.push(ids.iter().map(|&i| artifact.vocab.label(i)).collect());
        documents.push(ids);
    }
    if documents.is_empty() {
        return Err(Failure::Usage(anyhow!("corpus has no document of two or more characters")));
    }
    Ok(EvalInputs { artifact, documents, labels })
}

fn setup(cfg: &EvalCmdConfig, artifact: &ModelArtifact, ablation: &str) -> Result<MemorySetup, Failure> {
    let shape = artifact.model.shape();
    let mut bank = cfg.bank.clone();
    bank.dim = shape.head_dim();
    let layers = match ablation {
        "none" => Vec::new(),
        name => {
            bank.ablation = name.parse::<Ablation>()?;
            cfg.layers.clone().unwrap_or_else(|| (0..shape.layers).collect())
        }
    };
    let mut s = MemorySetup::new(cfg.window, layers, bank);
    s.dedupe = cfg.dedupe;
    s.validate(shape)?;
    if !s.is_baseline() {
        s.bank.validate()?;
    }
    Ok(s)
}

/// Evaluates every document and folds the results into one report.
/// Returns the banks of the last document when `keep_banks` is set.
fn evaluate(
    cfg: &EvalCmdConfig,
    inputs: &EvalInputs,
    setup: &MemorySetup,
    digest: &str,
    keep_banks: bool,
) -> Result<(EvalReport, Option<BankSet>), Failure> {
    let model = &inputs.artifact.model;
    let (reports, banks) = if cfg.reset && !keep_banks {
        (eval_clm_documents(model, &inputs.documents, setup)?, None)
    } else {
        let mut banks = BankSet::new(model.shape(), setup)?;
        if keep_banks {
            banks.enable_slot_logs();
        }
        let mut reports = Vec::new();
        for (doc, labels) in inputs.documents.iter().zip(&inputs.labels) {
            if cfg.reset {
                banks = BankSet::new(model.shape(), setup)?;
                if keep_banks {
                    banks.enable_slot_logs();
                }
            }
            reports.push(eval_clm_with_banks(model, doc, setup, &mut banks, Some(labels))?);
        }
        (reports, Some(banks))
    };

    let mut merged = EvalReport {
        config_digest: digest.to_string(),
        ablation: setup.label(),
        window: setup.window,
        per_window: Vec::new(),
        mean_nll: 0.0,
        perplexity: 1.0,
        buckets: Vec::new(),
        trace: Vec::new(),
        events: Vec::new(),
    };
    for r in reports {
        for row in r.per_window {
            merged.per_window.push(WindowRow { index: merged.per_window.len(), ..row });
        }
        merged.trace.extend(r.trace);
        merged.events.extend(r.events);
    }
    if !merged.trace.is_empty() {
        merged.mean_nll = merged.trace.iter().map(|t| t.nll).sum::<f64>() / merged.trace.len() as f64;
        merged.perplexity = merged.mean_nll.exp();
    }
    let edges = cfg.bucket_edges.clone().unwrap_or_else(|| DEFAULT_BUCKET_EDGES.to_vec());
    merged.buckets = freq_bucket_report(&merged.trace, &inputs.artifact.frequencies, &edges)?;
    Ok((merged, banks))
}

pub fn eval(path: &Path, common: &Common, overrides: EvalOverrides, slot_log: bool) -> Result<(), Failure> {
    let start = Instant::now();
    let loaded = load_eval(path, common, &overrides)?;
    let cfg = &loaded.config;
    let inputs = inputs(cfg)?;
    create_out(&common.out)?;
    write_json(&common.out.join("config.json"), &loaded.json)?;
    for name in &cfg.ablations {
        let setup = setup(cfg, &inputs.artifact, name)?;
        let (report, banks) = evaluate(cfg, &inputs, &setup, &loaded.digest, slot_log)?;
        write_json(&common.out.join(format!("eval-{name}.json")), &report)?;
        report.write_windows_csv(std::fs::File::create(common.out.join(format!("eval-{name}.csv")))?)?;
        if let Some(banks) = banks {
            for (layer, head, bank) in banks.iter() {
                let stem = format!("{name}-l{layer}-h{head}");
                if let Some(log) = bank.slot_log() {
                    log.write_csv(std::fs::File::create(common.out.join(format!("slots-{stem}.csv")))?)?;
                }
                std::fs::write(common.out.join(format!("bank-{stem}.snapshot")), bank.snapshot())?;
            }
        }
        println!("{name:<18} perplexity {:.4}  ({} tokens)", report.perplexity, report.scored_tokens());
    }
    if !common.deterministic {
        println!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    }
    Ok(())
}

pub fn sweep(
    path: &Path,
    common: &Common,
    axis: Axis,
    model: Option<PathBuf>,
    corpus: Option<PathBuf>,
) -> Result<(), Failure> {
    let overrides =
        EvalOverrides { model, corpus, ablation: None, windows: None, memory: None, threshold: None, no_reset: false };
    let loaded = load_eval(path, common, &overrides)?;
    let base = &loaded.config;
    let inputs = inputs(base)?;
    let ablation = base.sweep.ablation.clone().unwrap_or_else(|| "full".into());

    let rows: Vec<(String, EvalCmdConfig)> = match axis {
        Axis::Threshold => base
            .sweep
            .threshold
            .iter()
            .map(|&r| (r.to_string(), EvalCmdConfig { bank: base.bank.clone().with_threshold(r), ..base.clone() }))
            .collect(),
        Axis::Memory => base
            .sweep
            .memory
            .iter()
            .map(|&m| {
                (m.to_string(), EvalCmdConfig { bank: BankConfig { capacity: m, ..base.bank.clone() }, ..base.clone() })
            })
            .collect(),
        Axis::Similarity => base
            .sweep
            .similarity
            .iter()
            .map(|&s| {
                (s.name().to_string(), EvalCmdConfig { bank: base.bank.clone().with_similarity(s), ..base.clone() })
            })
            .collect(),
        Axis::Window => {
            base.sweep.window.iter().map(|&w| (w.to_string(), EvalCmdConfig { window: w, ..base.clone() })).collect()
        }
    };
    if rows.is_empty() {
        return Err(Failure::Usage(anyhow!("config lists no sweep values for this axis")));
    }

    let axis_name = match axis {
        Axis::Threshold => "R",
        Axis::Memory => "memory",
        Axis::Similarity => "similarity",
        Axis::Window => "window",
    };
    create_out(&common.out)?;
    write_json(&common.out.join("config.json"), &loaded.json)?;
    let mut w = csv::Writer::from_path(common.out.join(format!("sweep-{axis_name}.csv")))?;
    let mut header = vec!["axis", "value", "ablation", "perplexity", "mean_nll", "tokens", "config_digest"];
    if !common.deterministic {
        header.push("seconds");
    }
    w.write_record(&header)?;
    for (value, cfg) in rows {
        let start = Instant::now();
        let setup = setup(&cfg, &inputs.artifact, &ablation)?;
        let (report, _) = evaluate(&cfg, &inputs, &setup, &loaded.digest, false)?;
        let mut rec = vec![
            axis_name.to_string(),
            value.clone(),
            ablation.clone(),
            format!("{:.17e}", report.perplexity),
            format!("{:.17e}", report.mean_nll),
            report.scored_tokens().to_string(),
            loaded.digest.clone(),
        ];
        if !common.deterministic {
            rec.push(format!("{:.3}", start.elapsed().as_secs_f64()));
        }
        w.write_record(&rec)?;
        println!("{axis_name}={value:<12} perplexity {:.4}", report.perplexity);
    }
    w.flush()?;
    Ok(())
}
