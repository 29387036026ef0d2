//! Estimate the influence of individual in-context examples on few-shot
//! prompting performance by evaluating many random example subsets, then use
//! those influences for example selection, datamodel fitting, baseline
//! comparison, and positional-bias analysis.

pub mod backend;
pub mod baselines;
pub mod collector;
pub mod config;
pub mod corpus;
pub mod datamodel;
pub mod error;
pub mod influence;
pub mod persist;
pub mod positional;
pub mod scaling;
pub mod stats;

pub use error::{Error, Result};

/// Seed list used for random example orderings in evaluation.
pub const ORDERING_SEEDS: [u64; 7] = [42, 51, 56, 67, 75, 82, 98];

/// Default split seed.
pub const DEFAULT_SEED: u64 = 42;

/// Deterministic RNG used everywhere a seeded stream is needed.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Stable 64-bit hash (FNV-1a with a splitmix64 finalizer). Process- and
/// platform-independent, unlike `DefaultHasher`.
#[derive(Debug, Clone, Copy)]
pub struct StableHash(u64);

impl Default for StableHash {
    fn default() -> Self {
        StableHash(0xcbf29ce484222325)
    }
}

impl StableHash {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_bytes(mut self, bytes: &[u8]) -> Self {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
        self
    }

    pub fn write_u64(self, v: u64) -> Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_str(self, s: &str) -> Self {
        self.write_bytes(s.as_bytes()).write_u64(s.len() as u64)
    }

    pub fn finish(self) -> u64 {
        // splitmix64 finalizer
        let mut z = self.0.wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Finish and map to a uniform f64 in [0, 1).
    pub fn unit(self) -> f64 {
        (self.finish() >> 11) as f64 / (1u64 << 53) as f64
    }
}
