//! Deterministic random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Independent streams
//! of the same seed are separated with ChaCha's stream counter, so bidders,
//! availability draws and deviation draws never share randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const AVAILABILITY: u64 = 1;
const DRAWS: u64 = 2;
const REPLICATE: u64 = 3;
const BIDDER_BASE: u64 = 1 << 32;

/// Generator on stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used by bidder `i` to sample bids.
pub fn bidder(seed: u64, i: usize) -> Rng {
    stream(seed, BIDDER_BASE + i as u64)
}

/// Stream used to sample availability realizations.
pub fn availability(seed: u64) -> Rng {
    stream(seed, AVAILABILITY)
}

/// Stream used for deviation draws and Monte Carlo estimators.
pub fn draws(seed: u64) -> Rng {
    stream(seed, DRAWS)
}

/// Seed of replicate `r` derived from a master seed (SplitMix64 finalizer).
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    let mut z = master
        .wrapping_add(REPLICATE.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((r as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
