use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{derive_seed, load};
use super::{create_out, write_json, Common, Failure, Timing};
use crate::memory::{Ablation, BankConfig, BankStats, WriteAction};
use crate::sim::{fifo_oracle_check, generate_stream, mode_recovery_metrics, run_memory_on_samples, FifoCheck};
use crate::sim::{MixtureSpec, RecoveryReport, StreamRun};
use crate::vector::{threshold_to_radius, SimilarityKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub mixture: MixtureSpec,
    pub bank: BankConfig,
    pub window: usize,
    /// Read each window before writing it.
    #[serde(default)]
    pub read: bool,
    /// When set, replaces the mixture and bank seeds with named sub-streams.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
struct Metrics<'a> {
    config_digest: &'a str,
    window: usize,
    events: usize,
    recovery: RecoveryReport,
    fifo: Option<FifoCheck>,
    stats: BankStats,
    checks: &'a [Check],
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<Timing>,
}

pub fn run(
    path: &Path,
    common: &Common,
    assert: bool,
    window: Option<usize>,
    memory: Option<usize>,
) -> Result<(), Failure> {
    let start = Instant::now();
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(("/seed", json!(s)));
    }
    if let Some(w) = window {
        overrides.push(("/window", json!(w)));
    }
    if let Some(m) = memory {
        overrides.push(("/bank/capacity", json!(m)));
    }
    let loaded = load::<SimulateConfig>(path, overrides)?;
    let mut cfg = loaded.config;
    if let Some(seed) = cfg.seed {
        cfg.mixture.seed = derive_seed(seed, "stream");
        cfg.bank.seed = derive_seed(seed, "ablation");
    }

    let samples = generate_stream(&cfg.mixture, cfg.mixture.total_len())?;
    let run = run_memory_on_samples(samples, &cfg.bank, cfg.window, cfg.read)?;
    let recovery = mode_recovery_metrics(&run, &cfg.mixture)?;
    let fifo =
        (cfg.bank.ablation == Ablation::NoConsolidation).then(|| fifo_oracle_check(&run.events, cfg.bank.capacity));
    let checks = checks(&cfg, &run, &recovery, fifo.as_ref());

    create_out(&common.out)?;
    write_json(&common.out.join("config.json"), &loaded.json)?;
    run.write_events_csv(std::fs::File::create(common.out.join("events.csv"))?)?;
    std::fs::write(common.out.join("bank.snapshot"), run.bank.snapshot())?;
    let metrics = Metrics {
        config_digest: &loaded.digest,
        window: cfg.window,
        events: run.events.len(),
        recovery,
        fifo: fifo.clone(),
        stats: run.bank.stats(),
        checks: &checks,
        timing: Timing::since(start, common),
    };
    write_json(&common.out.join("metrics.json"), &metrics)?;

    println!(
        "occupancy {}/{}  recovered {}/{}  purity {:.4}  max key error {:.3e}",
        metrics.stats.occupancy,
        metrics.stats.capacity,
        metrics.recovery.recovered,
        metrics.recovery.modes_seen,
        metrics.recovery.purity,
        metrics.recovery.max_key_error
    );
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(d) = fifo.as_ref().and_then(|f| f.divergence.as_ref()) {
        println!(
            "divergence event={} window={} token={} expected_slot={} found_slot={} action={}",
            d.event, d.window, d.token, d.expected_slot, d.found_slot, d.found_action
        );
    }
    if assert && !failed.is_empty() {
        let names: Vec<&str> = failed.iter().map(|c| c.name).collect();
        return Err(Failure::Check(names.join(", ")));
    }
    Ok(())
}

fn checks(cfg: &SimulateConfig, run: &StreamRun, recovery: &RecoveryReport, fifo: Option<&FifoCheck>) -> Vec<Check> {
    let mut out = Vec::new();

    let destroyed: u64 = run
        .events
        .iter()
        .map(|e| match e.action {
            WriteAction::Replaced { destroyed_count } => destroyed_count,
            _ => 0,
        })
        .sum();
    let expected = run.events.len() as u64 - destroyed;
    out.push(Check {
        name: "count-conservation",
        passed: run.bank.total_count() == expected,
        detail: format!("sum of counts {} vs writes minus destroyed {expected}", run.bank.total_count()),
    });

    if let Some(f) = fifo {
        out.push(Check {
            name: "fifo",
            passed: f.passed,
            detail: format!("{} events matched a FIFO buffer", f.events_checked),
        });
    }

    if cfg.bank.ablation == Ablation::NoNovelty {
        let evictions = run.events.iter().filter(|e| matches!(e.action, WriteAction::Replaced { .. })).count();
        out.push(Check { name: "no-evictions", passed: evictions == 0, detail: format!("{evictions} evictions") });
    }

    if zero_noise_separated(cfg) && recovery.modes_seen <= cfg.bank.capacity {
        let passed =
            recovery.recovered == recovery.modes_seen && recovery.max_key_error <= 1e-12 && recovery.purity == 1.0;
        out.push(Check {
            name: "zero-noise-recovery",
            passed,
            detail: format!(
                "recovered {}/{}, max key error {:.3e}, purity {}",
                recovery.recovered, recovery.modes_seen, recovery.max_key_error, recovery.purity
            ),
        });
    }
    out
}

/// Noise-free cosine run whose unit-normalized mode means are pairwise more
/// than twice the kernel radius apart.
fn zero_noise_separated(cfg: &SimulateConfig) -> bool {
    if cfg.bank.ablation != Ablation::Full
        || cfg.bank.similarity != SimilarityKind::Cosine
        || cfg.mixture.phases.iter().any(|p| p.sigma != 0.0)
    {
        return false;
    }
    let Ok(radius) = threshold_to_radius(cfg.bank.threshold) else { return false };
    let means: Vec<_> = (0..cfg.mixture.num_modes()).filter_map(|m| cfg.mixture.mode_mean(m)).collect();
    if means.iter().any(|v| v.norm() == 0.0) {
        return false;
    }
    let units: Vec<Vec<f64>> = means.iter().map(|v| v.iter().map(|x| x / v.norm()).collect()).collect();
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            if crate::vector::euclidean_distance(&units[i], &units[j]) <= 2.0 * radius {
                return false;
            }
        }
    }
    true
}
