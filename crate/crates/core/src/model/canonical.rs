//! Canonical serialization and hashing.
//!
//! Object keys are emitted in lexicographic order, reals with 17 significant
//! digits, and keys ending in `_wall_ms` (wall-clock measurements) are dropped,
//! so equal domain values always produce equal digests.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest as _, Sha256};

/// Hex-encoded SHA-256 digest of a canonical serialization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Digest(pub String);

impl Digest {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Digest of raw bytes, for report files and hash chains.
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Digest(hex::encode(Sha256::digest(bytes)))
    }

    /// Extends a hash chain with another digest.
    pub fn chain(&self, next: &Digest) -> Digest {
        let mut hasher = Sha256::new();
        hasher.update(self.0.as_bytes());
        hasher.update(b":");
        hasher.update(next.0.as_bytes());
        Digest(hex::encode(hasher.finalize()))
    }

    pub fn zero() -> Self {
        Digest("0".repeat(64))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const WALL_CLOCK_SUFFIX: &str = "_wall_ms";

/// Canonical text form of any serializable domain value.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("domain values serialize to JSON");
    let mut out = String::new();
    write_value(&value, &mut out);
    out
}

pub fn canonical_hash<T: Serialize + ?Sized>(value: &T) -> Digest {
    Digest::of_bytes(canonical_json(value).as_bytes())
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                let f = n.as_f64().unwrap_or(0.0);
                out.push_str(&format!("{f:.16e}"));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().filter(|k| !k.ends_with(WALL_CLOCK_SUFFIX)).collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("keys serialize"));
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RunConfig;
    use serde_json::json;

    #[test]
    fn same_config_same_digest() {
        let cfg = RunConfig::new("crc", "mock", 0.2);
        assert_eq!(canonical_hash(&cfg), canonical_hash(&cfg.clone()));
        assert_eq!(canonical_hash(&cfg).as_str().len(), 64);
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = json!({"b": 1, "a": [1.5, "x"]});
        let b: Value = serde_json::from_str(r#"{"a":[1.5,"x"],"b":1}"#).unwrap();
        assert_eq!(canonical_json(&a), canonical_json(&b));
        assert_eq!(canonical_json(&a), r#"{"a":[1.5000000000000000e0,"x"],"b":1}"#);
    }

    #[test]
    fn one_byte_changes_digest() {
        let a = json!({"payload": "lint clean"});
        let b = json!({"payload": "lint clear"});
        assert_ne!(canonical_hash(&a), canonical_hash(&b));
    }

    #[test]
    fn wall_clock_fields_excluded() {
        let a = json!({"verdicts": 3, "tool_wall_ms": 10});
        let b = json!({"verdicts": 3, "tool_wall_ms": 99999});
        assert_eq!(canonical_hash(&a), canonical_hash(&b));
    }

    #[test]
    fn reals_use_seventeen_digits() {
        assert_eq!(canonical_json(&0.1f64), "1.0000000000000001e-1");
    }
}
