//! Content hashes identifying the configuration behind a number.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 (first 16 bytes) of the canonical JSON encoding of `value`.
pub fn spec_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("specs serialize");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..16])
}

/// Crate version recorded alongside emitted tables.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_sensitive() {
        let a = spec_hash(&("x", 1.0));
        assert_eq!(a, spec_hash(&("x", 1.0)));
        assert_ne!(a, spec_hash(&("x", 1.0000001)));
        assert_eq!(a.len(), 32);
    }
}
