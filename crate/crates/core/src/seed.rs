//! Stable seed derivation.
//!
//! Seeds for sub-tasks (a participant, a trial, a run) are derived by hashing
//! the parent seed together with string/integer keys, so results do not
//! depend on iteration order or on the platform's `Hash` implementation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Incremental builder for derived seeds.
#[derive(Debug, Clone, Copy)]
pub struct SeedDeriver(u64);

impl SeedDeriver {
    pub fn new(seed: u64) -> Self {
        SeedDeriver(FNV_OFFSET).int(seed)
    }

    fn bytes(mut self, bytes: &[u8]) -> Self {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn int(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn str(self, s: &str) -> Self {
        // length prefix keeps ("ab","c") and ("a","bc") apart
        self.int(s.len() as u64).bytes(s.as_bytes())
    }

    pub fn finish(self) -> u64 {
        splitmix(self.0)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.finish())
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
