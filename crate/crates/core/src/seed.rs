//! Deterministic seed derivation.
//!
//! Every random stream in training and evaluation is keyed by a global seed plus
//! a path of labels (utterance id, epoch, step), so results do not depend on
//! iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, labels: &[&dyn std::fmt::Display]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update(label.to_string().as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(seed: u64, labels: &[&dyn std::fmt::Display]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}
