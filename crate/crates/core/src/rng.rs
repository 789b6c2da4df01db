//! Deterministic RNG stream derivation.
//!
//! Every random decision in a run draws from a ChaCha8 stream derived from
//! the run seed and a tag path such as `(PROPAGATE, round, particle)`. Streams
//! are independent of scheduling, so concurrent propagation cannot change what
//! any particle observes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Each distinct decision site gets its own constant so derived
/// streams never collide.
pub mod stream {
    pub const PROPAGATE: u64 = 0x5052_4f50;
    pub const SCORE: u64 = 0x5343_4f52;
    pub const RESAMPLE: u64 = 0x5245_5341;
    pub const WHOLE_SCORE: u64 = 0x5748_4f4c;
    pub const REFERENCE: u64 = 0x5245_4645;
    pub const SWAP: u64 = 0x5357_4150;
    pub const CHAIN_ITER: u64 = 0x4348_4954;
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const DVTS: u64 = 0x4456_5453;
    pub const QUESTION: u64 = 0x5155_4553;
    pub const TASK: u64 = 0x5441_534b;
    pub const SELECT: u64 = 0x5345_4c43;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed with a tag path into a new 64-bit seed.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = root ^ 0x6a09_e667_f3bc_c908;
    let mut out = splitmix64(&mut state);
    for &tag in tags {
        state ^= tag.wrapping_mul(0x2545_f491_4f6c_dd1d);
        out = splitmix64(&mut state);
    }
    out
}

/// A ChaCha8 stream for the given tag path.
pub fn derive_rng(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tags))
}
