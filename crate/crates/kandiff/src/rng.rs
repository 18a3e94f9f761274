//! Seeded RNG with named substreams so that noise draws, timestep draws
//! and parameter init are independently reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Substreams of one run-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Noise,
    Timestep,
    Patch,
    Sample,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Noise => 2,
            Stream::Timestep => 3,
            Stream::Patch => 4,
            Stream::Sample => 5,
        }
    }
}

/// A deterministic generator for one substream of `seed`.
pub fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s.id());
    rng
}

/// Standard normal draws into a fresh buffer.
pub fn normal_vec<T: crate::Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    use rand::Rng;
    // Box-Muller; avoids a rand_distr dependency and is generic over T.
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(T::fl(r * theta.cos()));
        if out.len() < n {
            out.push(T::fl(r * theta.sin()));
        }
    }
    out
}
