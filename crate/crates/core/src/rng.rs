//! Seed plumbing. Every random draw in the crate comes from a stream derived
//! from an explicit seed plus a tag path, so results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a tag path into a single stream id.
pub fn stream_id(tags: &[u64]) -> u64 {
    tags.iter().fold(0x5EED_u64, |acc, t| splitmix64(acc ^ splitmix64(*t)))
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for `(seed, tags...)`.
pub fn tagged_rng(seed: u64, tags: &[u64]) -> StreamRng {
    stream_rng(seed, stream_id(tags))
}
