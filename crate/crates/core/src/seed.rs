//! Named-stream seed splitting.
//!
//! Every source of randomness is derived from a single master seed plus a
//! stream name, so sub-components (dataset, shuffle, init, ...) stay
//! independently reproducible. The mixer is a fixed FNV-1a/splitmix
//! combination rather than the stdlib hasher, which is not stable across
//! Rust releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for the named stream.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    splitmix(master ^ fnv1a(name.as_bytes()))
}

/// Seeded RNG for the named stream.
pub fn stream_rng(master: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_seed(master, name))
}
