//! Per-item seed derivation.
//!
//! Every random draw in the crate comes from a generator seeded by a hash of
//! the master seed and the item's coordinates, so output never depends on
//! generation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) type ItemRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `master`, one splitmix round per part.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master.wrapping_add(GOLDEN)), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN)))
    })
}

/// FNV-1a over the UTF-8 bytes, for keying seeds by string ids.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub(crate) fn item_rng(master: u64, parts: &[u64]) -> ItemRng {
    ItemRng::seed_from_u64(derive_seed(master, parts))
}
