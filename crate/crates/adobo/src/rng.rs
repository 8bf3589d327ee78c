//! Deterministic RNG derivation.
//!
//! Every random choice in a run descends from one master seed. Each consumer
//! gets its own ChaCha8 stream so that, e.g., changing the acquisition
//! sample count does not perturb GP initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams; the discriminant is the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    /// Initial design points.
    Init = 0,
    /// Acquisition candidate sampling.
    Acquisition = 1,
    /// Hyperparameter multistart draws.
    HyperFit = 2,
    /// Method-specific randomness (e.g. the first model of the
    /// least-squares baseline).
    Method = 3,
    /// Oracle multistart draws.
    Oracle = 4,
}

/// Build the generator for one stream of a master seed.
pub fn stream_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
