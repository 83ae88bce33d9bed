//! Seeded random streams.
//!
//! Every consumer derives its generator from `(seed, stream)` so that parallel
//! and serial executions draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids reserved for non-per-sample consumers.
pub mod streams {
    pub const INIT: u64 = u64::MAX;
    pub const SHUFFLE: u64 = u64::MAX - 1;
    pub const BASELINES: u64 = u64::MAX - 2;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
