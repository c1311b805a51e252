use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::bank::MemoryBank;

/// Read-only summary of a bank.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BankStats {
    pub capacity: usize,
    pub occupancy: usize,
    /// count value -> number of occupied slots holding it
    pub count_histogram: BTreeMap<u64, usize>,
    /// age value -> number of occupied slots holding it
    pub age_histogram: BTreeMap<u64, usize>,
    pub total_consolidated: u64,
}

impl MemoryBank {
    pub fn stats(&self) -> BankStats {
        let mut count_histogram = BTreeMap::new();
        let mut age_histogram = BTreeMap::new();
        for s in self.slots().iter().filter(|s| s.occupied) {
            *count_histogram.entry(s.count).or_insert(0) += 1;
            *age_histogram.entry(s.age).or_insert(0) += 1;
        }
        BankStats {
            capacity: self.capacity(),
            occupancy: self.occupancy(),
            count_histogram,
            age_histogram,
            total_consolidated: self.total_count(),
        }
    }

    /// Indices of occupied slots sorted by descending count (ties by index).
    pub fn top_slots(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.capacity()).filter(|&i| self.slots()[i].occupied).collect();
        idx.sort_by(|&a, &b| self.slots()[b].count.cmp(&self.slots()[a].count).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

impl BankStats {
    /// CSV rows `metric,key,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "key", "value"])?;
        w.write_record(["capacity", "", &self.capacity.to_string()])?;
        w.write_record(["occupancy", "", &self.occupancy.to_string()])?;
        w.write_record(["total_consolidated", "", &self.total_consolidated.to_string()])?;
        for (count, n) in &self.count_histogram {
            w.write_record(["count_histogram", &count.to_string(), &n.to_string()])?;
        }
        for (age, n) in &self.age_histogram {
            w.write_record(["age_histogram", &age.to_string(), &n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
