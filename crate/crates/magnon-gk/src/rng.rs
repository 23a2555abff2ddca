//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha20 stream selected by
//! `(seed, stream)`: the 64-bit seed keys the cipher and the stream id picks
//! one of its 2^64 independent counter sequences. Ensemble member `k` of a run
//! with base seed `s` uses seed [`member_seed`]`(s, k)`, so results do not
//! depend on how members are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Named stream ids.
pub mod stream {
    pub const EVENT_TIMES: u64 = 1;
    pub const TRIPLES: u64 = 2;
    pub const INITIAL: u64 = 3;
    pub const SAMPLER: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser of `seed ⊕ golden·(k+1)`.
pub fn member_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
