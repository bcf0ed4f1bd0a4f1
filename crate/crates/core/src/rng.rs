//! Keyed random streams.
//!
//! Every stochastic decision in a run draws from a stream identified by
//! `(root seed, purpose tag, iteration, sample index)`. The key is folded into
//! a 256-bit ChaCha8 seed with SplitMix64 finalizers, so a stream depends only
//! on its key and never on how many other streams were consumed before it.
//! Per-sample work can therefore run in any order, or on any number of
//! workers, and produce the same bits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a over the tag bytes.
pub fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub tag: u64,
    pub iteration: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, tag: &str, iteration: u64, index: u64) -> Self {
        Self {
            seed,
            tag: tag_hash(tag),
            iteration,
            index,
        }
    }

    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut acc = splitmix64(self.seed);
        acc = splitmix64(acc ^ self.tag);
        acc = splitmix64(acc ^ self.iteration);
        acc = splitmix64(acc ^ self.index);
        let mut out = [0u8; 32];
        for (lane, chunk) in out.chunks_exact_mut(8).enumerate() {
            let word = splitmix64(acc ^ (lane as u64).wrapping_mul(0xD134_2543_DE82_EF95));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        out
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.seed_bytes())
    }
}

pub fn stream(seed: u64, tag: &str, iteration: u64, index: u64) -> StreamRng {
    StreamKey::new(seed, tag, iteration, index).rng()
}
