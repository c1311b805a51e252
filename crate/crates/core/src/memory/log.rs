//! Per-slot record of which tokens were routed where.

use std::io::Write;

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotAction {
    /// The token started the slot (fresh insert or replacement).
    Created,
    Consolidated,
}

impl SlotAction {
    pub fn name(self) -> &'static str {
        match self {
            SlotAction::Created => "created",
            SlotAction::Consolidated => "consolidated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogEntry {
    pub label: String,
    pub action: SlotAction,
    /// Index of the write call that routed this token.
    pub write_call: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotLog {
    histories: Vec<Vec<LogEntry>>,
    write_call: u64,
}

impl SlotLog {
    pub(crate) fn new(capacity: usize) -> Self {
        Self { histories: vec![Vec::new(); capacity], write_call: 0 }
    }

    pub(crate) fn record(&mut self, slot: usize, label: String, action: SlotAction) {
        let history = &mut self.histories[slot];
        if action == SlotAction::Created {
            history.clear();
        }
        history.push(LogEntry { label, action, write_call: self.write_call });
    }

    pub(crate) fn end_write(&mut self) {
        self.write_call += 1;
    }

    pub fn history(&self, slot: usize) -> &[LogEntry] {
        self.histories.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn labels(&self, slot: usize) -> Vec<&str> {
        self.history(slot).iter().map(|e| e.label.as_str()).collect()
    }

    /// CSV rows `slot,order,write_call,label,action` for every non-empty slot.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "order", "write_call", "label", "action"])?;
        for (slot, history) in self.histories.iter().enumerate() {
            for (order, e) in history.iter().enumerate() {
                w.write_record([
                    slot.to_string(),
                    order.to_string(),
                    e.write_call.to_string(),
                    e.label.clone(),
                    e.action.name().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{BankConfig, MemoryBank};
    use crate::vector::DenseVector;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn consolidating_tokens_share_history() {
        let mut b = MemoryBank::new(BankConfig::new(8, 2)).unwrap();
        b.enable_slot_log();
        b.write_labeled(&[v(&[1.0, 0.0]), v(&[0.99, 0.01])], &vec![v(&[0.0, 0.0]); 2], &labels(&["he", "she"]))
            .unwrap();
        let log = b.slot_log().unwrap();
        assert_eq!(log.labels(0), vec!["he", "she"]);
        assert!(log.history(1).is_empty());
        assert!(log.history(100).is_empty());
    }

    #[test]
    fn eviction_restarts_history() {
        let mut b = MemoryBank::new(BankConfig::new(1, 2)).unwrap();
        b.enable_slot_log();
        b.write_labeled(&[v(&[1.0, 0.0]), v(&[1.0, 0.0])], &vec![v(&[0.0, 0.0]); 2], &labels(&["a", "b"])).unwrap();
        b.write_labeled(&[v(&[0.0, 1.0])], &[v(&[0.0, 0.0])], &labels(&["c"])).unwrap();
        let log = b.slot_log().unwrap();
        assert_eq!(log.labels(0), vec!["c"]);
        assert_eq!(log.history(0)[0].write_call, 1);

        let mut csv = Vec::new();
        log.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "slot,order,write_call,label,action\n0,0,1,c,created\n");
    }
}
