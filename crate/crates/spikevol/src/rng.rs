//! Deterministic seed derivation.
//!
//! Every randomized stage derives its own RNG stream from a global seed plus
//! a textual label (and optionally an index or id). Derivation uses a fixed
//! 64-bit mix so streams are stable across platforms and releases; reruns
//! with the same global seed reproduce every stream bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap label hashing.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a byte string into a running 64-bit state.
fn absorb(mut state: u64, bytes: &[u8]) -> u64 {
    for chunk in bytes.chunks(8) {
        let mut block = [0u8; 8];
        block[..chunk.len()].copy_from_slice(chunk);
        state = mix64(state ^ u64::from_le_bytes(block));
    }
    // Length is absorbed so "ab"+"c" and "a"+"bc" cannot collide.
    mix64(state ^ (bytes.len() as u64))
}

/// Derive a child seed from `seed` and a stage label.
pub fn derive(seed: u64, label: &str) -> u64 {
    absorb(mix64(seed), label.as_bytes())
}

/// Derive a child seed from `seed`, a stage label, and an index.
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    mix64(derive(seed, label) ^ mix64(index))
}

/// Derive a child seed keyed by string ids (e.g. image id + detection id).
pub fn derive_keyed(seed: u64, label: &str, keys: &[&str]) -> u64 {
    let mut state = derive(seed, label);
    for key in keys {
        state = absorb(state, key.as_bytes());
    }
    state
}

/// Build the stream cipher RNG used everywhere randomness is needed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw (Box–Muller), avoiding an extra distribution crate.
pub fn normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
