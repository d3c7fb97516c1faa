//! Seeded random streams.
//!
//! Every stochastic operation draws from ChaCha8 seeded with a 64-bit seed.
//! Independent sub-streams (one per Monte-Carlo replica, one per purpose) are
//! derived by selecting a ChaCha stream id, so results do not depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name recorded in checkpoints and configuration snapshots.
pub const RNG_ALGORITHM: &str = "ChaCha8";

pub type Rng = ChaCha8Rng;

/// Stream ids reserved for the different consumers of a single seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    WavePhases = 1,
    Init = 2,
    Shuffle = 3,
    TrainDropout = 4,
    Noise = 5,
    Anchor = 6,
    /// Replica streams start here; replica `i` uses `Replica + i`.
    Replica = 1 << 32,
}

pub fn stream(seed: u64, purpose: Purpose) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

pub fn replica_stream(seed: u64, replica: usize) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(Purpose::Replica as u64 + replica as u64);
    rng
}
