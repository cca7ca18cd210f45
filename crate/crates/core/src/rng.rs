//! Seeded random streams.
//!
//! Every random draw in the engine descends from a single `u64` master seed.
//! Independent consumers (chains, forecast paths, evaluation refits) get their
//! own ChaCha stream so their output does not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EngineRng = ChaCha8Rng;

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> EngineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; used to derive child seeds from a parent seed and a
/// list of labels.
pub fn mix_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut state = seed;
    for &label in labels {
        state = splitmix(state ^ splitmix(label.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
