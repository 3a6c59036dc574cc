//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value derived from the run seed and a stream label. Derivation is
//! SplitMix64 over the seed mixed with an FNV-1a hash of the label, so the
//! mapping is fixed across platforms and releases of `rand`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a textual stream label.
pub fn derive(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(label.as_bytes())))
}

/// Derive a child seed from a parent seed and an integer stream id.
pub fn derive_u64(seed: u64, id: u64) -> u64 {
    splitmix64(seed ^ splitmix64(id.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn stream(seed: u64, label: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive(seed, label))
}

pub fn stream_u64(seed: u64, id: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_u64(seed, id))
}

pub fn from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
