//! Seeded random streams.
//!
//! Every (entity, purpose) pair draws from its own ChaCha8 stream keyed by the
//! master seed, so adding an entity never shifts the draws of another one.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{positive, ParamError};
use crate::model::EntityId;

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Purpose {
    Arrivals = 1,
    Channel = 2,
    Access = 3,
    VoiceCalls = 4,
    CallDuration = 5,
    Feedback = 6,
    Backoff = 7,
    Target = 8,
    Background = 9,
}

/// Stream key: the entity id in the high bits, the purpose in the low byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId(pub u64);

impl StreamId {
    pub fn new(entity: EntityId, purpose: Purpose) -> Self {
        Self((u64::from(entity) << 8) | purpose as u64)
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream.0);
        Self { seed, stream, rng }
    }

    pub fn for_entity(seed: u64, entity: EntityId, purpose: Purpose) -> Self {
        Self::new(seed, StreamId::new(entity, purpose))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn exp(&mut self, rate: f64) -> Result<f64, ParamError> {
        exp_sample(self, rate)
    }

    /// `true` with probability `p`; `p <= 0` never fires and `p >= 1` always does.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
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

/// Exponentially distributed interarrival time with the given rate (mean `1/rate`).
pub fn exp_sample(rng: &mut RngStream, rate: f64) -> Result<f64, ParamError> {
    let rate = positive("rate", rate)?;
    let dist = Exp::new(rate).map_err(|_| ParamError::NonPositive {
        name: "rate",
        value: rate,
    })?;
    Ok(dist.sample(&mut rng.rng))
}

/// Derives an independent seed for a (point, replication) cell of a sweep.
pub fn derive_seed(master: u64, point: u64, replication: u64) -> u64 {
    let mut z = master
        ^ point.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ replication.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_mean_converges() {
        let mut rng = RngStream::new(7, StreamId(1));
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| rng.exp(1.0).unwrap()).sum();
        let mean = sum / n as f64;
        assert!((0.997..=1.003).contains(&mean), "mean {mean}");
    }

    #[test]
    fn exponential_support() {
        let mut rng = RngStream::new(3, StreamId(9));
        assert!((0..10_000).all(|_| rng.exp(0.5).unwrap() >= 0.0));
    }

    #[test]
    fn same_seed_same_sequence() {
        let draw = || {
            let mut rng = RngStream::new(42, StreamId::new(3, Purpose::Arrivals));
            (0..100).map(|_| rng.exp(2.0).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::for_entity(42, 1, Purpose::Arrivals);
        let mut b = RngStream::for_entity(42, 2, Purpose::Arrivals);
        let mut c = RngStream::for_entity(42, 1, Purpose::Channel);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_ne!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn rejects_non_positive_rate() {
        let mut rng = RngStream::new(1, StreamId(0));
        assert!(rng.exp(0.0).is_err());
        assert!(rng.exp(-1.0).is_err());
        assert!(rng.exp(f64::INFINITY).is_err());
    }

    #[test]
    fn bernoulli_edges() {
        let mut rng = RngStream::new(1, StreamId(0));
        assert!((0..1000).all(|_| !rng.bernoulli(0.0)));
        assert!((0..1000).all(|_| rng.bernoulli(1.0)));
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..50 {
            for r in 0..20 {
                assert!(seen.insert(derive_seed(42, p, r)));
            }
        }
    }
}
