use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::{MixtureSpec, StreamEvent, StreamRun};
use crate::attention::{augment, prefix_causal_attention, AugmentedKv};
use crate::error::{Error, Result};
use crate::memory::{MemoryBank, WriteAction};
use crate::vector::{euclidean_distance, DenseVector};

/// Largest history the exact attention oracle accepts.
pub const MAX_ORACLE_HISTORY: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeMatch {
    pub mode: usize,
    pub samples: u64,
    /// Slot nearest to the mode mean, if any slot is occupied.
    pub slot: Option<usize>,
    pub recovered: bool,
    /// Distance from the slot key to the mode's sample mean.
    pub key_error: Option<f64>,
    pub slot_count: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub modes_seen: usize,
    pub recovered: usize,
    /// Mean and max key error over recovered modes; 0 when none are.
    pub mean_key_error: f64,
    pub max_key_error: f64,
    /// Fraction of recovered modes whose slot count equals their sample count.
    pub count_accuracy: f64,
    /// Instances sharing their slot's majority label, over all instances in
    /// occupied slots.
    pub purity: f64,
    pub occupancy: usize,
    pub per_mode: Vec<ModeMatch>,
}

/// Labels of the instances each slot currently holds, replayed from the log.
fn slot_histories(run: &StreamRun) -> Vec<Vec<usize>> {
    let mut hist = vec![Vec::new(); run.bank.capacity()];
    for e in &run.events {
        match e.action {
            WriteAction::Consolidated => hist[e.slot].push(e.mode),
            _ => hist[e.slot] = vec![e.mode],
        }
    }
    hist
}

fn majority(labels: &[usize]) -> Option<(usize, usize)> {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    // BTreeMap order makes the lowest label win ties
    counts.into_iter().fold(None, |best, (l, c)| match best {
        Some((_, bc)) if bc >= c => best,
        _ => Some((l, c)),
    })
}

/// Matches each mode seen in the stream to the occupied slot nearest its mean.
/// A mode counts as recovered when that slot's majority label is the mode.
pub fn mode_recovery_metrics(run: &StreamRun, spec: &MixtureSpec) -> Result<RecoveryReport> {
    let d = run.bank.dim();
    let mut sums: BTreeMap<usize, (Vec<f64>, u64)> = BTreeMap::new();
    for s in &run.samples {
        let e = sums.entry(s.true_mode).or_insert_with(|| (vec![0.0; d], 0));
        for (a, b) in e.0.iter_mut().zip(s.key.iter()) {
            *a += b;
        }
        e.1 += 1;
    }
    let hist = slot_histories(run);
    let slots = run.bank.slots();
    let occupied: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].occupied).collect();

    let mut per_mode = Vec::new();
    for (&mode, (sum, n)) in &sums {
        let mean = spec
            .mode_mean(mode)
            .ok_or_else(|| Error::InvalidInput(format!("sample mode {mode} is not in the mixture")))?;
        let sample_mean: Vec<f64> = sum.iter().map(|x| x / *n as f64).collect();
        let slot = occupied.iter().copied().min_by(|&a, &b| {
            euclidean_distance(&slots[a].key, mean).total_cmp(&euclidean_distance(&slots[b].key, mean))
        });
        let recovered = slot.is_some_and(|s| majority(&hist[s]).map(|m| m.0) == Some(mode));
        per_mode.push(ModeMatch {
            mode,
            samples: *n,
            slot,
            recovered,
            key_error: slot.map(|s| euclidean_distance(&slots[s].key, &sample_mean)),
            slot_count: slot.map(|s| slots[s].count),
        });
    }

    let rec: Vec<&ModeMatch> = per_mode.iter().filter(|m| m.recovered).collect();
    let errors: Vec<f64> = rec.iter().filter_map(|m| m.key_error).collect();
    let (mut majority_total, mut total) = (0usize, 0usize);
    for &s in &occupied {
        if let Some((_, c)) = majority(&hist[s]) {
            majority_total += c;
            total += hist[s].len();
        }
    }
    Ok(RecoveryReport {
        modes_seen: per_mode.len(),
        recovered: rec.len(),
        mean_key_error: if errors.is_empty() { 0.0 } else { errors.iter().sum::<f64>() / errors.len() as f64 },
        max_key_error: errors.iter().copied().fold(0.0, f64::max),
        count_accuracy: if rec.is_empty() {
            0.0
        } else {
            rec.iter().filter(|m| m.slot_count == Some(m.samples)).count() as f64 / rec.len() as f64
        },
        purity: if total == 0 { 1.0 } else { majority_total as f64 / total as f64 },
        occupancy: occupied.len(),
        per_mode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FifoDivergence {
    pub event: usize,
    pub window: usize,
    pub token: usize,
    pub expected_slot: usize,
    pub found_slot: usize,
    pub found_action: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FifoCheck {
    pub passed: bool,
    pub events_checked: usize,
    pub divergence: Option<FifoDivergence>,
}

/// Replays the log against a capacity-`capacity` FIFO buffer. Every token must
/// claim a slot: the lowest free one while the buffer fills, afterwards the
/// slot of the oldest resident token. Stops at the first divergence.
pub fn fifo_oracle_check(events: &[StreamEvent], capacity: usize) -> FifoCheck {
    let mut free: Vec<bool> = vec![true; capacity];
    let mut queue: VecDeque<usize> = VecDeque::with_capacity(capacity);
    for (i, e) in events.iter().enumerate() {
        let expected = if queue.len() < capacity { free.iter().position(|&f| f) } else { queue.front().copied() };
        let expected_action_ok = match e.action {
            WriteAction::Consolidated => false,
            WriteAction::Inserted => queue.len() < capacity,
            WriteAction::Replaced { .. } => queue.len() == capacity,
        };
        if expected != Some(e.slot) || !expected_action_ok {
            return FifoCheck {
                passed: false,
                events_checked: i,
                divergence: Some(FifoDivergence {
                    event: e.index,
                    window: e.window,
                    token: e.token,
                    expected_slot: expected.unwrap_or(usize::MAX),
                    found_slot: e.slot,
                    found_action: e.action.name().into(),
                }),
            };
        }
        if queue.len() == capacity {
            queue.pop_front();
        }
        free[e.slot] = false;
        queue.push_back(e.slot);
    }
    FifoCheck { passed: true, events_checked: events.len(), divergence: None }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FullAttentionReport {
    /// Windowed attention with the bank's retrieved prefix.
    pub augmented: Vec<DenseVector>,
    /// Attention over the whole stored history plus the causal window.
    pub exact: Vec<DenseVector>,
    /// Per-token max absolute difference between the two.
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
}

/// Compares memory-augmented attention for one window against exact attention
/// over every past key/value. A diagnostic: no bound is implied.
pub fn full_attention_oracle(
    history_keys: &[DenseVector],
    history_values: &[DenseVector],
    queries: &[DenseVector],
    keys: &[DenseVector],
    values: &[DenseVector],
    bank: &MemoryBank,
    scale: f64,
) -> Result<FullAttentionReport> {
    if history_keys.len() != history_values.len() {
        return Err(Error::InvalidInput("history keys and values differ in length".into()));
    }
    if history_keys.len() > MAX_ORACLE_HISTORY {
        return Err(Error::InvalidInput(format!(
            "history of {} entries exceeds the oracle limit {MAX_ORACLE_HISTORY}",
            history_keys.len()
        )));
    }
    let read = bank.read_nearest(keys)?;
    let augmented = prefix_causal_attention(queries, &augment(keys, values, &read)?, scale)?;
    let mut all_keys = history_keys.to_vec();
    all_keys.extend_from_slice(keys);
    let mut all_values = history_values.to_vec();
    all_values.extend_from_slice(values);
    let full = AugmentedKv { keys: all_keys, values: all_values, prefix_len: history_keys.len() };
    let exact = prefix_causal_attention(queries, &full, scale)?;
    let deviation: Vec<f64> = augmented
        .iter()
        .zip(&exact)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        .collect();
    let max_deviation = deviation.iter().copied().fold(0.0, f64::max);
    Ok(FullAttentionReport { augmented, exact, deviation, max_deviation })
}
