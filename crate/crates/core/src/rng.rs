//! Seeded random streams.
//!
//! Every Monte Carlo replicate `b` draws from `substream(seed, b)`: a
//! ChaCha12 generator keyed by `seed` with its stream id set to `b`. Results
//! therefore do not depend on how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed for a named sub-task, so that e.g. scenario
/// generation and design sampling never share a stream.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    use rand::RngCore;
    let mut rng = substream(seed ^ 0x9e37_79b9_7f4a_7c15, tag);
    rng.next_u64()
}
