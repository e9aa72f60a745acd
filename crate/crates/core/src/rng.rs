//! Reproducible random streams.
//!
//! Every stochastic step draws from a [`RngStream`] keyed by the run seed, the
//! sweep number, the sampler phase and the entity (document, class, topic)
//! being updated. Because a stream depends only on that key, the order in
//! which worker threads visit entities never affects the draws, which is what
//! makes a run bit-identical for any worker count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A ChaCha8 stream identified by a 64-bit seed and a 64-bit stream id.
///
/// ChaCha is counter based: distinct stream ids with the same seed select
/// non-overlapping keystreams.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

/// Sampler phases used as part of a stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Phase {
    Init = 1,
    Latent = 2,
    Coefficients = 3,
    Topics = 4,
    Phi = 5,
    Predict = 6,
    Simulate = 7,
    Folds = 8,
    DataResample = 9,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { inner }
    }

    /// Stream for one entity in one phase of one sweep.
    pub fn for_entity(seed: u64, iteration: u64, phase: Phase, entity: u64) -> Self {
        let key = mix64(seed ^ mix64(iteration.wrapping_add(0x9E37_79B9_7F4A_7C15)))
            ^ mix64((phase as u64).wrapping_mul(0xD134_2543_DE82_EF95));
        Self::new(mix64(key), entity)
    }

    pub fn seed(&self) -> [u8; 32] {
        self.inner.get_seed()
    }

    pub fn stream_id(&self) -> u64 {
        self.inner.get_stream()
    }
}

impl RngCore for RngStream {
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

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
