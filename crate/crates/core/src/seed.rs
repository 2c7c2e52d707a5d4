//! Labeled seed derivation: one root seed fans out into independent,
//! reproducible per-stage streams.

use sha2::{Digest, Sha256};

/// Seed for stage `label` derived from `root`.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
