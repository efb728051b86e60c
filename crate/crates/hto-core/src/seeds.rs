//! Deterministic sub-seed derivation.
//!
//! Every pipeline stage draws its randomness from a seed derived from a
//! single root seed and the stage name, so any stage can be re-run in
//! isolation and still reproduce the full pipeline bit for bit.

use sha2::{Digest, Sha256};

/// Derive a stage seed from `root` and a stage label.
///
/// The derivation is `SHA-256(root_le_bytes || label)` truncated to the
/// first 8 bytes (little-endian).
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest longer than 8 bytes"))
}
