//! Seedable, splittable random streams.
//!
//! Every stochastic routine takes an explicit [`SeedRng`]. The generator is
//! ChaCha8 (`rand_chacha`), a counter-based cipher stream whose output is
//! identical across platforms. A stream is addressed by `(seed, stream)`:
//! replication `k` of an experiment seeded with `seed` uses stream `k`, so
//! workers never share a mutable generator and results do not depend on
//! scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SeedRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` of the generator keyed by `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.inner.get_stream()
    }

    /// Derives the generator for sub-task `index` (replication, worker, ...).
    ///
    /// The child is keyed by a SplitMix64 mix of this stream's seed and
    /// stream id, and addressed by `index`; it does not consume output from
    /// `self`.
    pub fn split(&self, index: u64) -> SeedRng {
        let key = splitmix64(self.seed ^ splitmix64(self.stream().wrapping_add(0x5eed)));
        SeedRng::with_stream(key, index)
    }
}

impl RngCore for SeedRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
