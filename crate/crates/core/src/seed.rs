//! Labeled seed derivation.
//!
//! Every random stream in the toolkit is keyed by a user seed plus a label,
//! hashed with SHA-256. Streams therefore never depend on call order or on the
//! number of worker threads.

use sha2::{Digest, Sha256};

/// Derives an independent 64-bit seed for the stream named `label`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

/// Stable 64-bit hash of `seed ‖ key`.
pub fn keyed_hash(seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}
