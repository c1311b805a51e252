//! The `camelot` command line.
//!
//! Exit codes: 0 on success, 1 when an oracle or assertion fails or a file is
//! malformed, 2 for usage and I/O errors.

mod config;
mod inspect;
mod lm;
mod simulate;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{canonical_json, config_digest, derive_seed, set_pointer};
pub use lm::{EvalCmdConfig, EvalCorpus, SweepValues, TrainCmdConfig, TrainCorpus};
pub use simulate::SimulateConfig;

#[derive(Debug)]
pub enum Failure {
    /// An oracle or `--assert` check failed, or an input file is malformed.
    Check(String),
    Usage(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Usage(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "camelot", version, about = "Consolidated associative memory experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Directory for reports.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Master seed; overrides the config's.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave timings and timestamps out of reports.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    #[value(name = "R", alias = "r")]
    Threshold,
    Memory,
    Similarity,
    Window,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a bank over a synthetic mixture stream and check it against oracles.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Exit 1 if any invariant check fails.
        #[arg(long)]
        assert: bool,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        memory: Option<usize>,
    },
    /// Train the character model.
    Train {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Corpus file; overrides the config's corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Windowed perplexity with and without memory.
    EvalClm {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated ablations; `none` is the plain model.
        #[arg(long, value_delimiter = ',')]
        ablation: Option<Vec<String>>,
        /// Window length L.
        #[arg(long)]
        windows: Option<usize>,
        /// Slots per bank.
        #[arg(long)]
        memory: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Export per-slot token logs and bank snapshots.
        #[arg(long)]
        slot_log: bool,
        /// Carry banks across documents instead of resetting them.
        #[arg(long)]
        no_reset: bool,
    },
    /// One evaluation per value of a single hyperparameter.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Summarize a bank snapshot.
    Inspect {
        snapshot: PathBuf,
        /// Number of slots to list.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Slot log CSV to print token labels from.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Check(msg) => eprintln!("check failed: {msg}"),
                Failure::Usage(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { config, common, assert, window, memory } => {
            simulate::run(&config, &common, assert, window, memory)
        }
        Command::Train { config, common, corpus, steps } => lm::train(&config, &common, corpus, steps),
        Command::EvalClm {
            config,
            common,
            model,
            corpus,
            ablation,
            windows,
            memory,
            threshold,
            slot_log,
            no_reset,
        } => {
            let overrides = lm::EvalOverrides { model, corpus, ablation, windows, memory, threshold, no_reset };
            lm::eval(&config, &common, overrides, slot_log)
        }
        Command::Sweep { config, common, axis, model, corpus } => lm::sweep(&config, &common, axis, model, corpus),
        Command::Inspect { snapshot, top, labels } => inspect::run(&snapshot, top, labels.as_deref()),
    }
}

/// `CAMELOT_THREADS` caps the worker pool.
fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CAMELOT_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("CAMELOT_THREADS={v:?} is not a count"))?;
        // a pool may already exist when run() is called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

/// Wall-clock fields added to reports unless `--deterministic` is set.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
    pub finished_unix: u64,
}

impl Timing {
    fn since(start: std::time::Instant, common: &Common) -> Option<Self> {
        (!common.deterministic).then(|| Timing {
            elapsed_seconds: start.elapsed().as_secs_f64(),
            finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Usage(e.into()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}
