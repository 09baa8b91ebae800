//! Seeded random streams.
//!
//! Every stochastic job is keyed by `(seed, index)`: the seed selects a
//! ChaCha8 key and the index selects the ChaCha stream, so trajectory `j`
//! always sees the same numbers no matter which worker generates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed from a parent seed and an index (splitmix64 finalizer
/// over the pair). Used for repetition and fold seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
