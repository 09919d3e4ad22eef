//! Seeding. Every random stream is a ChaCha8 generator; child seeds are
//! derived from `(parent, purpose tag, index)` so that streams used for
//! different purposes never overlap and results do not depend on the order
//! in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SaRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Child seed for the `index`-th stream with the given purpose.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    let a = splitmix(parent ^ fnv1a(tag.as_bytes()));
    splitmix(a ^ splitmix(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn rng_from_seed(seed: u64) -> SaRng {
    SaRng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, tag: &str, index: u64) -> SaRng {
    rng_from_seed(derive_seed(parent, tag, index))
}
