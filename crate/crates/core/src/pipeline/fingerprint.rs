//! Content fingerprints of configuration blocks.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// SHA-256 of the canonical JSON of `value` (object keys sorted), in hex.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_value(value)?;
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&canonical)?)))
}

/// Fingerprint of a stage: its name, its upstream fingerprints and its own
/// configuration.
pub fn stage_fingerprint<T: Serialize>(stage: &str, upstream: &[&str], config: &T) -> Result<String> {
    fingerprint(&serde_json::json!({ "stage": stage, "upstream": upstream, "config": config }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_order_does_not_matter() {
        let a: serde_json::Value = serde_json::from_str(r#"{"x": 1, "y": {"b": 2, "a": 3}}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"y": {"a": 3, "b": 2}, "x": 1}"#).unwrap();
        assert_eq!(fingerprint(&a).unwrap(), fingerprint(&b).unwrap());
        let c: serde_json::Value = serde_json::from_str(r#"{"x": 2, "y": {"a": 3, "b": 2}}"#).unwrap();
        assert_ne!(fingerprint(&a).unwrap(), fingerprint(&c).unwrap());
    }

    #[test]
    fn stage_chaining() {
        let base = stage_fingerprint("repr", &["abc"], &1).unwrap();
        assert_ne!(base, stage_fingerprint("repr", &["abd"], &1).unwrap());
        assert_ne!(base, stage_fingerprint("policy", &["abc"], &1).unwrap());
        assert_eq!(base.len(), 64);
    }
}
