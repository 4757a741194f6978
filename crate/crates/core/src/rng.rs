//! Counter-based random substreams.
//!
//! Every random quantity in a simulation is drawn from a ChaCha stream keyed
//! by `(master seed, domain, key)` and positioned by a stream id, so any
//! draw can be replayed without touching the draws that preceded it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes that consume randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Graph = 1,
    Objective = 2,
    InitialState = 3,
    GradientNoise = 4,
    NodeSample = 5,
    Test = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with an arbitrary list of tags into a new 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &tag| {
        splitmix64(acc ^ splitmix64(tag))
    })
}

/// Returns the generator for `(seed, domain, key)` on stream `stream`.
pub fn substream(seed: u64, domain: Domain, key: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[domain as u64, key]));
    rng.set_stream(stream);
    rng
}
