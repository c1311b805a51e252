use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;

use super::Failure;
use crate::memory::MemoryBank;

pub fn run(path: &Path, top: usize, labels: Option<&Path>) -> Result<(), Failure> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading snapshot {}", path.display())).map_err(Failure::Usage)?;
    let bank = MemoryBank::from_snapshot(&bytes).map_err(|e| Failure::Check(format!("{}: {e}", path.display())))?;
    let labels = match labels {
        Some(p) => Some(read_labels(p)?),
        None => None,
    };
    print!("{}", summary(&bank, top, labels.as_ref()));
    Ok(())
}

/// Slot index -> labels in write order, from a slot-log CSV.
fn read_labels(path: &Path) -> Result<BTreeMap<usize, Vec<String>>, Failure> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let slot: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Failure::Check(format!("{}: bad slot column", path.display())))?;
        out.entry(slot).or_default().push(rec.get(3).unwrap_or("").to_string());
    }
    Ok(out)
}

pub fn summary(bank: &MemoryBank, top: usize, labels: Option<&BTreeMap<usize, Vec<String>>>) -> String {
    let cfg = bank.config();
    let stats = bank.stats();
    let mut s = format!("occupancy {}/{}\n", stats.occupancy, stats.capacity);
    s += &format!(
        "dim {}  similarity {}  threshold {}  ablation {}\n",
        cfg.dim,
        cfg.similarity.name(),
        cfg.threshold,
        cfg.ablation.name()
    );
    s += &format!("total count {}\n", stats.total_consolidated);
    let slots = bank.top_slots(top);
    if !slots.is_empty() {
        s += "top slots:\n  slot     count      age  key_norm\n";
    }
    for i in slots {
        let slot = &bank.slots()[i];
        s += &format!("  {i:>4} {:>9} {:>8}  {:.4}", slot.count, slot.age, slot.key.norm());
        if let Some(l) = labels.and_then(|m| m.get(&i)) {
            let shown: Vec<&str> = l.iter().take(12).map(String::as_str).collect();
            s += &format!("  [{}{}]", shown.join(" "), if l.len() > 12 { " ..." } else { "" });
        }
        s.push('\n');
    }
    if !stats.age_histogram.is_empty() {
        s += "age histogram:\n";
        for (age, n) in &stats.age_histogram {
            s += &format!("  {age:>6}: {n}\n");
        }
    }
    s
}
