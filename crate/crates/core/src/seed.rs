//! Sub-seed derivation.
//!
//! Every random stream in a study is derived from one global seed with
//! [`derive_seed`], a SplitMix64 finalizer applied to the seed combined with
//! the stream identifier. Identical (seed, stream) pairs always yield the same
//! sub-seed, independent of evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers used by the pipeline.
pub mod stream {
    pub const FOREST: u64 = 0x666f_7265_7374;
    pub const ERROR_MODEL: u64 = 0x0067_7072;
    pub const FOLDS: u64 = 0x666f_6c64;
    pub const SIMULATION: u64 = 0x0073_696d;
    pub const VALIDATION: u64 = 0x0076_616c;
    pub const EXPORT: u64 = 0x0065_7870;
}

/// The generator used for every seeded stream.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64(seed ^ splitmix64(stream))`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
