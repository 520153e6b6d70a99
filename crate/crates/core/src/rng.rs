//! Seed expansion: one run seed, independent per-purpose streams.
//!
//! Each purpose gets its own ChaCha stream id, so consumers never share
//! generator state and adding a draw in one module cannot shift another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purposes that draw randomness during a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Excitation = 1,
    Sensor = 2,
    NetworkInit = 3,
    Shuffle = 4,
    Evaluation = 5,
    GradCheck = 6,
    HeldOut = 7,
}

/// Generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for `purpose`, derived from the run seed.
pub fn derive_seed(run_seed: u64, purpose: Stream) -> u64 {
    stream_rng(run_seed, purpose as u64).next_u64()
}
