//! Seeds and deterministic stream derivation.
//!
//! Every random draw in the engine comes from a [`ChaCha8Rng`] built from a
//! [`Seed`]. Independent consumers (per image, per iteration, per training
//! call) get their own seed through [`Seed::derive`], which mixes a stream
//! index into the base value with SplitMix64:
//!
//! ```text
//! derive(s, k) = splitmix64(s XOR splitmix64(k + 0x9E3779B97F4A7C15))
//! ```
//!
//! The mix is a bijection in `s` for fixed `k`, so distinct base seeds never
//! collide on the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn derive(self, stream: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    /// Derive along a path of stream indices, e.g. `[iteration, image]`.
    pub fn derive_path(self, path: &[u64]) -> Seed {
        path.iter().fold(self, |s, &k| s.derive(k))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

impl std::fmt::Display for Seed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
