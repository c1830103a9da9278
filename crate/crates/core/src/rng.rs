//! Counter-based randomness keyed by `(seed, stage tag, sample index)`.
//!
//! Every sample owns an independent ChaCha stream, so the values drawn for
//! sample `i` never depend on how work is split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::torus::TorusPoint;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a; stable across platforms and releases
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Source of per-sample generators for one stage of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRng {
    key: u64,
}

impl StageRng {
    pub fn new(seed: u64, tag: &str) -> Self {
        StageRng {
            key: splitmix64(seed ^ splitmix64(tag_hash(tag))),
        }
    }

    /// Generator for sample `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(index);
        rng
    }

    /// Uniform point of `T³` for sample `index`.
    pub fn point(&self, index: u64) -> TorusPoint {
        let mut r = self.stream(index);
        uniform_point(&mut r)
    }
}

pub fn uniform_point<R: Rng>(rng: &mut R) -> TorusPoint {
    let x: f64 = rng.random();
    let y: f64 = rng.random();
    let z: f64 = rng.random();
    TorusPoint::new(x, y, z).expect("unit interval samples are finite")
}
