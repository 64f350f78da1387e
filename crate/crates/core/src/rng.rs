//! Seeded random streams. Every consumer derives an independent stream
//! from a `(seed, stream)` pair so results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PipelineRng = ChaCha8Rng;

/// Stream ids reserved for pipeline stages.
pub mod streams {
    /// Scatterers of the RIS → AP link.
    pub const RIS_AP_ENVIRONMENT: u64 = 1 << 40;
    /// Scatterers of the MU → RIS link (shared by every user position).
    pub const MU_RIS_ENVIRONMENT: u64 = (1 << 40) + 1;
    /// Train/test shuffle.
    pub const SPLIT: u64 = (1 << 40) + 2;
    /// Receiver noise: offset by the sample index.
    pub const NOISE_BASE: u64 = 1 << 41;
    pub const INIT: u64 = (1 << 40) + 3;
    pub const EPOCH_SHUFFLE: u64 = (1 << 40) + 4;
    pub const GRADCHECK: u64 = (1 << 40) + 5;
}

pub fn stream_rng(seed: u64, stream: u64) -> PipelineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
