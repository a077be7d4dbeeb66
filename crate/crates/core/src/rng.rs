//! Deterministic rng stream derivation.
//!
//! Every stochastic component (parameter init, per-lane env dynamics,
//! per-lane action sampling, z sampling, discriminator training, ...)
//! draws from its own ChaCha stream derived from the run seed and a
//! label. Adding or removing a component therefore never shifts the
//! draws seen by the others, which is what makes the beta=0 reductions
//! and full-run determinism bit-exact.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit hash of a label (FNV-1a).
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Rng for component `label` of run `seed`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label));
    rng
}

/// Rng for lane `lane` of component `label` (vectorized envs).
pub fn lane_stream(seed: u64, label: &str, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label) ^ (lane.wrapping_mul(0x9e3779b97f4a7c15) | 1));
    rng
}
