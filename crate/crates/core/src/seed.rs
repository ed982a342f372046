//! Counter-based seed derivation.
//!
//! Every random quantity in the toolkit is drawn from a generator keyed by
//! `(master seed, stream tag, index)`. Draws therefore do not depend on the
//! order in which consumers run, on chunk boundaries, or on how many other
//! draws were made before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Master seed of a run or a consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Derives the 64-bit key of element `index` in stream `tag`.
    pub fn derive(self, tag: &str, index: u64) -> u64 {
        mix64(mix64(self.0 ^ fnv1a(tag)) ^ index)
    }

    /// Child seed, for handing an independent stream to a sub-consumer.
    pub fn child(self, tag: &str, index: u64) -> Seed {
        Seed(self.derive(tag, index))
    }

    pub fn rng(self, tag: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(tag, index))
    }

    /// Uniform draw in [0, 1) with 53 bits of resolution.
    pub fn uniform(self, tag: &str, index: u64) -> f64 {
        (self.derive(tag, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
