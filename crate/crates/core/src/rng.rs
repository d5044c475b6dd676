//! Counter-based seeding. Every random draw in a run is keyed by
//! `(seed, stream, step, particle)`, so results do not depend on evaluation
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Independent streams drawn from the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Diffusion = 1,
    MiniBatch = 2,
    EdgeNoise = 3,
    Initial = 4,
    Graph = 5,
    Problem = 6,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic generator for one `(seed, stream, step, particle)` cell.
pub fn counter_rng(seed: u64, stream: Stream, step: u64, particle: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix(seed),
        splitmix(seed ^ (stream as u64).rotate_left(32)),
        splitmix(step.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ stream as u64),
        splitmix(particle ^ 0xA076_1D64_78BD_642F),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seeded generator for one-off sampling (problem instances, graphs).
pub fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    counter_rng(seed, stream, 0, 0)
}

pub fn fill_standard_normal<R: rand::Rng>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
