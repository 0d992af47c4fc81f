//! Deterministic random streams.
//!
//! Every independent sampling unit (a path, an orbit segment, a sweep
//! point) owns a ChaCha8 stream selected by `(master seed, unit index)`.
//! Results therefore do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator every sampler draws from.
pub type PathRng = ChaCha8Rng;

/// Stream `unit` of the generator keyed by `seed`.
pub fn stream(seed: u64, unit: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit);
    rng
}

/// Derives a child seed from a parent seed and a label (splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed
        .wrapping_add(label.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
