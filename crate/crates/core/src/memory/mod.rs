//! Fixed-capacity associative memory with read, consolidating write,
//! statistics, slot logging and binary snapshots.

mod bank;
mod config;
mod log;
mod snapshot;
mod stats;

pub use bank::{MemoryBank, ReadOptions, ReadResult, Slot, TokenWrite, WriteAction, WriteReport};
pub use config::{Ablation, BankConfig, DEFAULT_THRESHOLD};
pub use log::{LogEntry, SlotAction, SlotLog};
pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use stats::BankStats;
