//! Seeded random streams.
//!
//! Every consumer derives its own ChaCha stream from `(seed, purpose)`, so a
//! dataset generator and the optimizer never draw from the same sequence even
//! when they are handed the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Ring = 1,
    Square = 2,
    Init = 3,
    Optimizer = 4,
    Perturb = 5,
    BatchSim = 6,
}

pub fn stream(seed: u64, purpose: Stream) -> Rng {
    sub_stream(seed, purpose, 0)
}

/// Independent replica `index` of a purpose stream.
pub fn sub_stream(seed: u64, purpose: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}
