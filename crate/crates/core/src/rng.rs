//! Keyed random streams.
//!
//! A run never shares one generator between clients or phases. Each draw site
//! derives its own ChaCha stream from the run seed plus a list of tags
//! (domain, client id, epoch, ...), which keeps results independent of the
//! order in which clients are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags separating the independent uses of a seed.
pub mod domain {
    pub const INIT: u64 = 0x01;
    pub const SYNTH: u64 = 0x02;
    pub const PARTITION: u64 = 0x03;
    pub const SHARE: u64 = 0x04;
    pub const TOPOLOGY: u64 = 0x05;
    pub const SEGMENTS: u64 = 0x06;
    pub const SEGMENT_GRAPH: u64 = 0x07;
    pub const SHUFFLE: u64 = 0x08;
    pub const DROPOUT: u64 = 0x09;
    pub const FEDAVG: u64 = 0x0a;
    pub const SIZES: u64 = 0x0b;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a generator for `seed` and the given tag path.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    Rng::seed_from_u64(h)
}
