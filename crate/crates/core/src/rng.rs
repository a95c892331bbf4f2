//! Deterministic random streams.
//!
//! Every consumer of randomness receives its own ChaCha stream derived from
//! the run seed plus a tag path, so the schedule (thread count, iteration
//! order) can never change results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag for cohort generation within an iteration.
pub const STREAM_STUDY: u64 = 0x01;
/// Stream tag for positive-control synthesis.
pub const STREAM_SYNTHESIS: u64 = 0x02;

/// SplitMix64 finalizer; mixes a word into a well-distributed seed.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent stream from the run seed and a tag path such as
/// `[STREAM_STUDY, iteration]` or `[STREAM_SYNTHESIS, iteration, s, t]`.
pub fn derive_stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &t in tags {
        state = splitmix64(state ^ t);
    }
    ChaCha8Rng::seed_from_u64(state)
}
