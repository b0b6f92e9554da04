//! Seeded random streams.
//!
//! Every stochastic routine draws from ChaCha8 seeded with
//! `seed_from_u64(seed)`. Parallel workers get their own stream via
//! [`substream`], which keeps the seed and selects ChaCha stream `index`,
//! so serial and parallel fits consume identical random sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
