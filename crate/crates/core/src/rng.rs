//! Explicit, seedable random streams.
//!
//! Every stochastic operation in the crate takes a `&mut Stream`. Independent
//! consumers (training batches, measurement rotations, bootstrap draws) get
//! their own stream from the same seed so that adding a measurement never
//! shifts the training trajectory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Named stream identifiers used by the training loop and CLI.
pub mod streams {
    pub const TRAIN: u64 = 0;
    pub const MEASURE: u64 = 1;
    pub const PROBE: u64 = 2;
    pub const DATA: u64 = 3;
    pub const INIT: u64 = 4;
    pub const ANALYSIS: u64 = 5;
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn seeded(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
