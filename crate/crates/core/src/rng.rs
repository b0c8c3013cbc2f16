//! Seeded random streams.
//!
//! Every run draws from its own ChaCha8 stream keyed by `(seed, run_index)`,
//! so replicas executed in parallel are independent and individually
//! reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream for replica `run_index` of an experiment seeded with `seed`.
pub fn substream(seed: u64, run_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}
