use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::Failure;

/// Compact JSON with object keys in sorted order.
pub fn canonical_json(value: &Value) -> String {
    // serde_json's default map is ordered by key
    value.to_string()
}

/// Hex SHA-256 of the canonical form of `value`.
pub fn config_digest(value: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(value).as_bytes()))
}

/// Seed for the named sub-stream (`train`, `stream`, `ablation`, ...) of a run.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update(b":");
    h.update(master.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("32-byte digest"))
}

/// A parsed config, the JSON it came from (after flag overrides), and that
/// JSON's digest.
pub struct Loaded<T> {
    pub config: T,
    pub json: Value,
    pub digest: String,
}

/// Reads `path`, applies `overrides` as `(json pointer, value)` pairs, and
/// deserializes. Unreadable files are usage errors; malformed ones too.
pub fn load<T: DeserializeOwned>(path: &Path, overrides: Vec<(&str, Value)>) -> Result<Loaded<T>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Usage)?;
    let mut json: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(Failure::Usage)?;
    for (pointer, value) in overrides {
        set_pointer(&mut json, pointer, value);
    }
    let config = serde_json::from_value(json.clone())
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(Failure::Usage)?;
    let digest = config_digest(&json);
    Ok(Loaded { config, json, digest })
}

/// Sets `/a/b/c` in `root`, creating objects along the way.
pub fn set_pointer(root: &mut Value, pointer: &str, value: Value) {
    let mut cur = root;
    for part in pointer.trim_start_matches('/').split('/') {
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        cur = cur.as_object_mut().expect("just made an object").entry(part.to_string()).or_insert(Value::Null);
    }
    *cur = value;
}
