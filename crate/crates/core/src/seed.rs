//! Seed derivation.
//!
//! Every random stream in the crate is derived from one global seed and a
//! purpose string (`"<module>/<purpose>"`), optionally indexed. The mixing is
//! FNV-1a over the purpose bytes followed by SplitMix64 finalization, so the
//! derivation is stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed for `purpose` from `seed`.
pub fn derive(seed: u64, purpose: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in purpose.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Derive a sub-seed for the `index`-th member of a family of streams.
pub fn derive_indexed(seed: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(derive(seed, purpose) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose))
}

pub fn rng_indexed(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, purpose, index))
}
