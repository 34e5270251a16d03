//! Seeded, splittable random streams.
//!
//! Every replication of every scenario draws from its own ChaCha stream so
//! results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream index reserved for draws shared by all replications of a scenario
/// (fixed-genotype studies).
pub const SHARED_STREAM: u64 = u64::MAX;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for scenario `index` of a study seeded with `study_seed`.
pub fn scenario_seed(study_seed: u64, index: u64) -> u64 {
    mix64(study_seed ^ mix64(index.wrapping_add(1)))
}

/// Independent stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
