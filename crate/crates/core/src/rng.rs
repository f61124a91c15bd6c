//! Seeded random streams.
//!
//! Every stage draws from ChaCha8 (a counter-based generator) keyed by the run seed,
//! with a distinct stream id per stage, so changing how much one stage consumes
//! never shifts another stage's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StageRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Data = 1,
    Pretrain = 2,
    Unlearn = 3,
    Eval = 4,
    /// Extra unlearn batches drawn after a degenerate step.
    Resample = 5,
    Retain = 6,
    TaskVector = 7,
    Theory = 8,
}

pub fn stream(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}
