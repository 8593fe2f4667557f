//! Seeded random streams.
//!
//! One master seed fans out into independent ChaCha8 streams, one per
//! consumer, so that e.g. changing the SAM radius never perturbs data order.
//! Streams are selected with [`ChaCha8Rng::set_stream`], which gives
//! non-overlapping keystreams for the same 256-bit key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Substream {
    /// Model parameter initialization.
    Init = 1,
    /// Minibatch order within each task.
    DataOrder = 2,
    /// Reservoir decisions and memory batch draws.
    Buffer = 3,
    /// Permutations and rotation angles of domain streams.
    Transforms = 4,
    /// Synthetic dataset generation.
    Synthetic = 5,
    /// Per-task subsampling of the base dataset.
    Subsample = 6,
}

pub fn substream(seed: u64, which: Substream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
