//! Derived seeds.
//!
//! Every random stream in the pipeline is seeded from one root seed. A stage
//! or a cell gets its own seed as `splitmix64(fnv1a(root_le_bytes ++ stage ++ 0x00 ++ key))`,
//! so adding cells or reordering work never perturbs another cell's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, stage: &str, key: &str) -> u64 {
    let h = fnv1a(root.to_le_bytes(), FNV_OFFSET);
    let h = fnv1a(stage.bytes(), h);
    let h = fnv1a([0u8], h);
    splitmix64(fnv1a(key.bytes(), h))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
