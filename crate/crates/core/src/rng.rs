//! Seeded RNG streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the run seed, so toggling one knob (say, the random bit assignment) never
//! perturbs another (say, the data shuffle).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod streams {
    pub const MODEL_INIT: u64 = 1;
    pub const DATA_SHUFFLE: u64 = 2;
    pub const RANDOM_PASS: u64 = 3;
    pub const SYNTH_DATA: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
