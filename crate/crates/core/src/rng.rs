//! Counter-based random streams.
//!
//! Every replicate, fold assignment and Monte Carlo cell draws from its own
//! ChaCha stream keyed by the master seed and addressed by a path of integer
//! ids, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream-path tags that keep independent uses of one seed apart.
pub mod tag {
    pub const BOOTSTRAP: u64 = 0xb007;
    pub const FOLDS: u64 = 0xf01d;
    pub const DATA: u64 = 0xda7a;
    pub const JITTER: u64 = 0x717e;
    pub const CELL: u64 = 0xce11;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path of ids into one 64-bit key.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &id| splitmix64(acc ^ splitmix64(id)))
}

/// The generator for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(derive(seed, path));
    rng
}
