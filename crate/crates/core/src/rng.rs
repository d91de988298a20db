//! Counter-addressed random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream whose key is
//! a hash of `(root seed, domain, i, j)`. Any `(iteration, sample)` pair can
//! therefore be regenerated independently of execution order, which is what
//! makes parallel inner loops bit-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag mixed into every stream key so unrelated draws never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    StopIndex = 1,
    Perturbation = 2,
    Sample = 3,
    Certificate = 4,
    Init = 5,
    Data = 6,
    Sampler = 7,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of a family of independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Stream addressed by `(domain, i, j)`.
    pub fn stream(&self, domain: Domain, i: u64, j: u64) -> ChaCha8Rng {
        let mut h = splitmix64(self.root);
        h = splitmix64(h ^ domain as u64);
        h = splitmix64(h ^ i);
        h = splitmix64(h ^ j.rotate_left(17));
        let mut key = [0u8; 32];
        let mut s = h;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// A child tree, e.g. one per repeat of an experiment.
    pub fn child(&self, index: u64) -> SeedTree {
        SeedTree::new(splitmix64(splitmix64(self.root) ^ index.wrapping_mul(0xA24B_AED4_963E_E407)))
    }
}
