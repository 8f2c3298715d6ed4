//! Deterministic seed derivation for parallel Monte Carlo.
//!
//! Every concurrent unit of work (a replication, a sample shard, a nested
//! gamma estimate) draws from its own ChaCha stream whose seed is derived
//! from the master seed and a path of stream ids. The derivation is a
//! fixed-point mixing function, so results do not depend on worker count
//! or scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A derivable stream identifier rooted at a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId(u64);

impl StreamId {
    pub fn root(master_seed: u64) -> Self {
        StreamId(mix(master_seed))
    }

    /// Derive the `index`-th child stream.
    pub fn child(self, index: u64) -> Self {
        StreamId(mix(self.0 ^ mix(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Instantiate the RNG for this stream.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}
