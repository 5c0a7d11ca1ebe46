//! Stable content hashes for configurations and artifacts.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// JSON text with object keys in sorted order, independent of struct field
/// order.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value keeps objects in a BTreeMap unless `preserve_order`
    // is enabled, so a round trip through Value sorts every level.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}
