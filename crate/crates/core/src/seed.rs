//! Deterministic seed splitting.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose seed
//! is derived from one master seed by walking a path of integer labels:
//!
//! ```text
//! child(seed, label) = mix(seed ^ mix(label + 0x9E3779B97F4A7C15))
//! ```
//!
//! where `mix` is the SplitMix64 finalizer. Results therefore never depend on the
//! order in which independent streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Top-level stream labels.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const INNER_MC: u64 = 4;
    pub const RUN_THROUGH: u64 = 5;
    pub const TEST_SET: u64 = 6;
    pub const POSTERIOR: u64 = 7;

    pub const PATH: u64 = 100;
    pub const COUNTS: u64 = 101;
    pub const ARRIVALS: u64 = 102;
    pub const SERVICE: u64 = 103;
    pub const CONTEXT: u64 = 104;
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self(master)
    }

    pub fn child(self, label: u64) -> Self {
        Self(mix(self.0 ^ mix(label.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
