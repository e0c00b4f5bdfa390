//! Seed derivation.
//!
//! A single user-facing seed is forked into independent streams per
//! subsystem: `derive_seed(seed, label)` is the first eight bytes
//! (little-endian) of `SHA-256(seed.to_le_bytes() || label)`. Streams that
//! need many independent children (bootstrap replicates, per-pair work) use
//! ChaCha stream selection on top of a derived seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

/// Independent child generator `index` of the stream `(seed, label)`.
pub fn child_rng(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = rng_for(seed, label);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive_seed(7, "train"), derive_seed(7, "train"));
        assert_ne!(derive_seed(7, "train"), derive_seed(7, "data"));
        assert_ne!(derive_seed(7, "train"), derive_seed(8, "train"));
    }

    #[test]
    fn child_streams_differ() {
        let a: u64 = child_rng(1, "boot", 0).random();
        let b: u64 = child_rng(1, "boot", 1).random();
        let a2: u64 = child_rng(1, "boot", 0).random();
        assert_ne!(a, b);
        assert_eq!(a, a2);
    }
}
