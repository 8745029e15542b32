//! Seeded random streams.
//!
//! Every random choice in the pipeline draws from a ChaCha stream keyed by
//! the user seed and a stream label, so a choice made for one source or file
//! never depends on how many draws happened elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0u8]);
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Independent per-item seed, e.g. one per sample id.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use rand::Rng;
    stream(seed, label).random::<u64>() >> 11
}

/// Short hex digest used for opaque identifiers.
pub fn digest_hex(parts: &[&[u8]], len: usize) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let mut s = hex::encode(h.finalize());
    s.truncate(len);
    s
}
