//! Seeded random streams, one per concern.
//!
//! A master seed is split into independent ChaCha streams keyed by a tag, so
//! that e.g. changing the dispatch strategy (which consumes tie-break draws)
//! does not shift the dwell times drawn for arriving vehicles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Movement,
    Ties,
    Dwell,
    Demand,
    Initial,
}

impl StreamTag {
    fn salt(self) -> u64 {
        match self {
            StreamTag::Movement => 0x6d6f_7665,
            StreamTag::Ties => 0x7469_6573,
            StreamTag::Dwell => 0x6477_656c,
            StreamTag::Demand => 0x6465_6d61,
            StreamTag::Initial => 0x696e_6974,
        }
    }
}

/// SplitMix64 finaliser, used for seed derivation only.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent replication under a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x5eed)))
}

#[derive(Debug, Clone)]
pub struct RngStream {
    pub seed: u64,
    pub tag: StreamTag,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, tag: StreamTag) -> Self {
        Self::with_key(seed, tag, 0)
    }

    /// A sub-stream for one entity (e.g. one agent's walk).
    pub fn with_key(seed: u64, tag: StreamTag, key: u64) -> Self {
        let s = mix64(seed ^ mix64(tag.salt()) ^ mix64(key.wrapping_mul(0x2545_f491_4f6c_dd1d)));
        Self {
            seed,
            tag,
            rng: ChaCha8Rng::seed_from_u64(s),
        }
    }
}

impl rand::RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
