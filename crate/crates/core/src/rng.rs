//! Seeded randomness.
//!
//! Every stochastic component (initialization, batching, reparameterization
//! noise, prior samples, data sampling, evaluation) draws from its own named
//! substream of a single run seed, so changing how one component consumes
//! randomness never perturbs another. The generator is xoshiro256++.

use rand::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Well-known substream names.
pub mod stream {
    pub const INIT: &str = "init";
    pub const DATA: &str = "data";
    pub const NOISE: &str = "noise";
    pub const PRIOR: &str = "prior";
    pub const EVAL: &str = "eval";
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic PRNG with Box–Muller normals.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent generator for the substream `name` of run seed `seed`.
    pub fn substream(seed: u64, name: &str) -> Self {
        Self::seed_from_u64(splitmix64(seed ^ splitmix64(fnv1a(name))))
    }

    /// Derives a child generator, e.g. one per worker or per repetition.
    pub fn fork(&mut self, index: u64) -> Self {
        let base: u64 = self.inner.gen();
        Self::seed_from_u64(splitmix64(base ^ splitmix64(index)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in 0..n.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen::<bool>()
    }

    /// Standard normal draw via the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
