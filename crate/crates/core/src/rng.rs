//! Counter-based reproducible random streams.
//!
//! Every trajectory (and every bootstrap resample) draws from a ChaCha8
//! stream keyed by `(master seed, stream index)`. Streams are independent
//! of scheduling, so ensembles reproduce bit-exactly under any worker
//! count and any execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream-index offsets reserving disjoint index ranges per purpose.
pub const STREAM_TRAJECTORY: u64 = 0;
pub const STREAM_BOOTSTRAP: u64 = 1 << 40;
pub const STREAM_SAMPLER: u64 = 1 << 41;

/// The stream for `(seed, index)`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
