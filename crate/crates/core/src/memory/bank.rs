use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Ablation, BankConfig};
use super::log::{SlotAction, SlotLog};
use crate::error::{Error, Result};
use crate::vector::{nearest_slot, similarity, DenseVector, SimilarityKind};

/// One memory slot. An unoccupied slot has zero count and age; its vectors
/// are zero and carry no meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub key: DenseVector,
    pub value: DenseVector,
    /// Number of instances averaged into this slot since it was (re)filled.
    pub count: u64,
    /// Write calls since this slot was last touched.
    pub age: u64,
    pub occupied: bool,
}

impl Slot {
    fn empty(dim: usize) -> Self {
        Self { key: DenseVector::zeros(dim), value: DenseVector::zeros(dim), count: 0, age: 0, occupied: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReadResult {
    pub keys: Vec<DenseVector>,
    pub values: Vec<DenseVector>,
    pub slot_indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ReadResult {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Keep only the first retrieval of each slot.
    pub dedupe: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum WriteAction {
    Consolidated,
    /// Filled a previously unoccupied slot.
    Inserted,
    /// Replaced an occupied slot, destroying `destroyed_count` instances.
    Replaced {
        destroyed_count: u64,
    },
}

impl WriteAction {
    pub fn name(&self) -> &'static str {
        match self {
            WriteAction::Consolidated => "consolidated",
            WriteAction::Inserted => "inserted",
            WriteAction::Replaced { .. } => "replaced",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenWrite {
    pub position: usize,
    pub slot: usize,
    pub action: WriteAction,
    /// Similarity to the nearest occupied slot at the time of the write, if any.
    pub similarity: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WriteReport {
    pub consolidated: usize,
    pub novel_inserted: usize,
    pub evicted_slot_indices: Vec<usize>,
    pub per_token: Vec<TokenWrite>,
}

impl WriteReport {
    pub fn destroyed_count(&self) -> u64 {
        self.per_token
            .iter()
            .map(|t| match t.action {
                WriteAction::Replaced { destroyed_count } => destroyed_count,
                _ => 0,
            })
            .sum()
    }
}

/// Fixed-capacity associative memory with consolidating writes.
///
/// Single writer: `write` takes `&mut self`. `read_nearest` only borrows, so
/// any number of argmax reads can share a bank between writes.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    pub(super) config: BankConfig,
    pub(super) slots: Vec<Slot>,
    pub(super) rng: ChaCha8Rng,
    pub(super) log: Option<SlotLog>,
}

impl MemoryBank {
    pub fn new(config: BankConfig) -> Result<Self> {
        config.validate()?;
        let slots = vec![Slot::empty(config.dim); config.capacity];
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, slots, rng, log: None })
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, index: usize) -> Option<&Slot> {
        self.slots.get(index)
    }

    pub fn occupancy(&self) -> usize {
        self.slots.iter().filter(|s| s.occupied).count()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|s| !s.occupied)
    }

    pub fn total_count(&self) -> u64 {
        self.slots.iter().map(|s| s.count).sum()
    }

    /// Starts recording which tokens land in which slot. Pass labels with
    /// [`MemoryBank::write_labeled`]; unlabeled writes log their position.
    pub fn enable_slot_log(&mut self) {
        if self.log.is_none() {
            self.log = Some(SlotLog::new(self.config.capacity));
        }
    }

    pub fn slot_log(&self) -> Option<&SlotLog> {
        self.log.as_ref()
    }

    /// Field-by-field equality of everything a snapshot captures.
    pub fn state_eq(&self, other: &MemoryBank) -> bool {
        self.config.capacity == other.config.capacity
            && self.config.dim == other.config.dim
            && self.config.similarity == other.config.similarity
            && self.config.ablation == other.config.ablation
            && self.config.threshold.to_bits() == other.config.threshold.to_bits()
            && self.slots == other.slots
            && self.rng == other.rng
    }

    fn check_keys(&self, keys: &[DenseVector]) -> Result<()> {
        for k in keys {
            Error::check_dim(self.config.dim, k.dim())?;
            if self.config.similarity == SimilarityKind::Cosine && k.iter().all(|x| *x == 0.0) {
                return Err(Error::ZeroVector);
            }
        }
        Ok(())
    }

    fn occupied_flags(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.occupied).collect()
    }

    fn nearest(&self, occupied: &[bool], query: &[f64]) -> Result<Option<(usize, f64)>> {
        nearest_slot(&self.slots.iter().map(|s| &s.key).collect::<Vec<_>>(), occupied, query, self.config.similarity)
    }

    /// Retrieves one slot per input key, in token order. Under the no-read
    /// ablation the slot is drawn uniformly from the occupied ones.
    pub fn read(&mut self, keys: &[DenseVector]) -> Result<ReadResult> {
        self.read_with(keys, ReadOptions::default())
    }

    pub fn read_with(&mut self, keys: &[DenseVector], options: ReadOptions) -> Result<ReadResult> {
        if self.config.ablation != Ablation::NoRead {
            return self.read_nearest_with(keys, options);
        }
        self.check_keys(keys)?;
        let occupied: Vec<usize> = (0..self.slots.len()).filter(|&i| self.slots[i].occupied).collect();
        let mut picks = Vec::with_capacity(keys.len());
        if !occupied.is_empty() {
            for key in keys {
                let slot = occupied[self.rng.random_range(0..occupied.len())];
                let score = score_or_zero(&self.slots[slot].key, key, self.config.similarity);
                picks.push((slot, score));
            }
        }
        Ok(self.collect(picks, options))
    }

    /// Argmax retrieval, ignoring the no-read ablation. Never mutates the bank.
    pub fn read_nearest(&self, keys: &[DenseVector]) -> Result<ReadResult> {
        self.read_nearest_with(keys, ReadOptions::default())
    }

    pub fn read_nearest_with(&self, keys: &[DenseVector], options: ReadOptions) -> Result<ReadResult> {
        self.check_keys(keys)?;
        let occupied = self.occupied_flags();
        let mut picks = Vec::with_capacity(keys.len());
        for key in keys {
            match self.nearest(&occupied, key)? {
                Some(hit) => picks.push(hit),
                None => break,
            }
        }
        Ok(self.collect(picks, options))
    }

    fn collect(&self, picks: Vec<(usize, f64)>, options: ReadOptions) -> ReadResult {
        let mut seen = vec![false; self.slots.len()];
        let mut out = ReadResult::default();
        for (slot, score) in picks {
            if options.dedupe {
                if seen[slot] {
                    continue;
                }
                seen[slot] = true;
            }
            out.keys.push(self.slots[slot].key.clone());
            out.values.push(self.slots[slot].value.clone());
            out.slot_indices.push(slot);
            out.scores.push(score);
        }
        out
    }

    /// Writes a window of keys and values, strictly left to right.
    ///
    /// Each token either consolidates into its nearest slot (score at or above
    /// the effective threshold) or claims a slot: the lowest unoccupied one,
    /// otherwise the oldest occupied one. Among equally old slots, those not
    /// yet touched in this call go first, then the lowest index. Touched slots
    /// end the call with age 0; every other occupied slot ages by one.
    pub fn write(&mut self, keys: &[DenseVector], values: &[DenseVector]) -> Result<WriteReport> {
        self.write_inner(keys, values, None)
    }

    pub fn write_labeled(
        &mut self,
        keys: &[DenseVector],
        values: &[DenseVector],
        labels: &[String],
    ) -> Result<WriteReport> {
        if labels.len() != keys.len() {
            return Err(Error::InvalidInput(format!("{} labels for {} tokens", labels.len(), keys.len())));
        }
        self.write_inner(keys, values, Some(labels))
    }

    fn write_inner(
        &mut self,
        keys: &[DenseVector],
        values: &[DenseVector],
        labels: Option<&[String]>,
    ) -> Result<WriteReport> {
        if keys.len() != values.len() {
            return Err(Error::InvalidInput(format!("{} keys but {} values", keys.len(), values.len())));
        }
        self.check_keys(keys)?;
        for v in values {
            Error::check_dim(self.config.dim, v.dim())?;
        }

        let threshold = self.config.effective_threshold();
        let mut touched = vec![false; self.slots.len()];
        let mut occupied = self.occupied_flags();
        let mut report = WriteReport::default();

        for (position, (key, value)) in keys.iter().zip(values).enumerate() {
            let nearest = self.nearest(&occupied, key)?;
            let (slot, action) = match nearest {
                Some((slot, score)) if score >= threshold => {
                    consolidate(&mut self.slots[slot], key, value);
                    report.consolidated += 1;
                    (slot, WriteAction::Consolidated)
                }
                _ => {
                    let (slot, action) = match occupied.iter().position(|o| !o) {
                        Some(free) => (free, WriteAction::Inserted),
                        None => {
                            let victim = self.eviction_victim(&touched);
                            report.evicted_slot_indices.push(victim);
                            let destroyed_count = self.slots[victim].count;
                            (victim, WriteAction::Replaced { destroyed_count })
                        }
                    };
                    let s = &mut self.slots[slot];
                    s.key = key.clone();
                    s.value = value.clone();
                    s.count = 1;
                    s.occupied = true;
                    occupied[slot] = true;
                    report.novel_inserted += 1;
                    (slot, action)
                }
            };
            self.slots[slot].age = 0;
            touched[slot] = true;

            if let Some(log) = &mut self.log {
                let label = match labels {
                    Some(l) => l[position].clone(),
                    None => position.to_string(),
                };
                let slot_action = match action {
                    WriteAction::Consolidated => SlotAction::Consolidated,
                    _ => SlotAction::Created,
                };
                log.record(slot, label, slot_action);
            }
            report.per_token.push(TokenWrite { position, slot, action, similarity: nearest.map(|(_, s)| s) });
        }

        for (slot, touched) in self.slots.iter_mut().zip(&touched) {
            if slot.occupied && !touched {
                slot.age += 1;
            }
        }
        if let Some(log) = &mut self.log {
            log.end_write();
        }
        Ok(report)
    }

    /// Maximal age wins, then slots not yet touched in the current call, then
    /// the lowest index. Touched slots already have age 0, so the winner's age
    /// is always maximal among occupied slots.
    fn eviction_victim(&mut self, touched: &[bool]) -> usize {
        if self.config.ablation == Ablation::NoRecency {
            return self.rng.random_range(0..self.slots.len());
        }
        let rank = |i: usize| (self.slots[i].age, !touched[i]);
        let mut victim = 0;
        for i in 1..self.slots.len() {
            if rank(i) > rank(victim) {
                victim = i;
            }
        }
        victim
    }
}

fn score_or_zero(a: &[f64], b: &[f64], kind: SimilarityKind) -> f64 {
    similarity(a, b, kind).unwrap_or(0.0)
}

/// Running-mean update: `m <- (x + c m) / (c + 1)` for key and value.
fn consolidate(slot: &mut Slot, key: &DenseVector, value: &DenseVector) {
    let c = slot.count as f64;
    for (m, x) in slot.key.as_mut_slice().iter_mut().zip(key.iter()) {
        *m = (x + c * *m) / (c + 1.0);
    }
    for (m, x) in slot.value.as_mut_slice().iter_mut().zip(value.iter()) {
        *m = (x + c * *m) / (c + 1.0);
    }
    slot.count += 1;
}
