//! Seed derivation. Every random stream in the system is a ChaCha8 generator
//! seeded from the run seed, a component name and an index, so parallel and
//! serial execution see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable 64-bit seed for `(seed, component, index)`.
pub fn derive_seed(seed: u64, component: &str, index: u64) -> u64 {
    splitmix(splitmix(seed ^ fnv1a(component.as_bytes())) ^ splitmix(index.wrapping_add(1)))
}

pub fn component_rng(seed: u64, component: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, component, index))
}
