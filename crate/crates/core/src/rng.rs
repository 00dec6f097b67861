//! Seeded randomness. One user seed feeds every randomized stage; each stage
//! reads its own ChaCha stream so stages never perturb each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Randomized stages, each mapped to a fixed stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth = 1,
    Rotation = 2,
    Balance = 3,
}

pub fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}
