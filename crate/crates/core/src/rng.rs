//! Counter-based seed derivation. Every stochastic draw comes from a stream
//! identified by a root seed and a small tuple of integers, so results do
//! not depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `root` with `stream` into a 64-bit seed.
pub fn derive_seed(root: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(root), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn derive_rng(root: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

/// Stable 64-bit hash of a string, for turning identifiers into stream ids.
pub fn label(s: &str) -> u64 {
    // FNV-1a
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
