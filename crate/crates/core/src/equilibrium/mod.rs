//! Brute-force checks of the equilibrium theory on finite spaces.
//!
//! The encoder is a table `q(z|x)`, the decoder a table `p_d(x|z)` together
//! with a fixed prior `p(z)`. Everything is computed by direct summation, so
//! the identities in this module hold to floating point precision.

mod dstar;
mod game;
mod spec;

pub use dstar::{
    assumption1_threshold, check_assumption1, dstar_objective, lemma1_optimal_kl, lemma1_scan_kl,
    solve_dstar, Assumption1Report, DstarMethod, PointCheck, ThresholdReport, EG_MAX_ITERATIONS,
    EG_STEP, EG_TOLERANCE, GRID_MAX_SUPPORT, GRID_STEPS,
};
pub use game::{
    ablation_no_real_elbo, decoder_loss, decoder_loss_identity, elbo, encoder_loss,
    equilibrium_candidate, shift_mass, verify_candidate, verify_equilibrium, AblationReport,
    EquilibriumReport, PlayerReport, SearchOptions, Status, LATTICE_STEPS,
};
pub use spec::{run_spec, EquilibriumSpec, Lemma1Instance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sum-to-one tolerance for [`DiscreteDistribution`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Probability vector on `{0, .., n-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Divides non-negative weights by their total.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("cannot normalize {weights:?}")));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs a non-empty support");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Self { probs }
    }

    /// Uniform draw from the simplex (flat Dirichlet).
    pub fn random(n: usize, rng: &mut crate::rng::Rng) -> Self {
        let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        Self::normalized(w).expect("exponential draws are positive")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(d: DiscreteDistribution) -> Self {
        d.probs
    }
}

impl std::ops::Index<usize> for DiscreteDistribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    0.0 - p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `KL(a || b)`; infinite when `b` misses mass of `a`.
pub fn kl(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if x > 0.0 {
            if y <= 0.0 {
                return f64::INFINITY;
            }
            s += x * (x / y).ln();
        }
    }
    s
}

/// Total variation, `0.5 * sum |a - b|`.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Prior `p(z)` and decoder table `p_d(x|z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    prior: DiscreteDistribution,
    /// One row per latent value, each a distribution over `x`.
    decoder: Vec<DiscreteDistribution>,
}

impl TabularModel {
    pub fn new(prior: DiscreteDistribution, decoder: Vec<DiscreteDistribution>) -> Result<Self> {
        if decoder.len() != prior.len() {
            return Err(Error::Dimension(format!(
                "{} decoder rows for a prior over {} values",
                decoder.len(),
                prior.len()
            )));
        }
        let n_x = decoder[0].len();
        if decoder.iter().any(|r| r.len() != n_x) {
            return Err(Error::Dimension("decoder rows differ in length".into()));
        }
        Ok(Self { prior, decoder })
    }

    pub fn n_x(&self) -> usize {
        self.decoder[0].len()
    }

    pub fn n_z(&self) -> usize {
        self.prior.len()
    }

    pub fn prior(&self) -> &DiscreteDistribution {
        &self.prior
    }

    pub fn decoder(&self) -> &[DiscreteDistribution] {
        &self.decoder
    }

    /// `p_d(x|z)`.
    pub fn likelihood(&self, x: usize, z: usize) -> f64 {
        self.decoder[z][x]
    }

    /// Generated marginal `p_d(x) = sum_z p(z) p_d(x|z)`.
    pub fn marginal(&self) -> DiscreteDistribution {
        let probs = (0..self.n_x()).map(|x| self.marginal_at(x)).collect();
        DiscreteDistribution { probs }
    }

    fn marginal_at(&self, x: usize) -> f64 {
        (0..self.n_z()).map(|z| self.prior[z] * self.decoder[z][x]).sum()
    }

    /// Exact posterior `p_d(z|x)`. Points the decoder never emits get the
    /// prior, which leaves every loss unchanged since they carry no weight.
    pub fn posterior(&self) -> Vec<DiscreteDistribution> {
        (0..self.n_x())
            .map(|x| {
                let px = self.marginal_at(x);
                if px > 0.0 {
                    let probs = (0..self.n_z())
                        .map(|z| self.prior[z] * self.decoder[z][x] / px)
                        .collect();
                    DiscreteDistribution { probs }
                } else {
                    self.prior.clone()
                }
            })
            .collect()
    }

    /// `E_{z ~ p(z)} E_{x ~ p_d(x|z)} [f(x)]`, i.e. the expectation over
    /// decoded prior samples.
    pub fn expect_decoded(&self, f: impl Fn(usize) -> f64) -> f64 {
        let mut total = 0.0;
        for z in 0..self.n_z() {
            let inner: f64 = (0..self.n_x())
                .filter(|&x| self.decoder[z][x] > 0.0)
                .map(|x| self.decoder[z][x] * f(x))
                .sum();
            total += self.prior[z] * inner;
        }
        total
    }
}

/// Calls `f` on every composition of `steps` into `n` non-negative parts,
/// in lexicographic order.
pub(crate) fn for_each_lattice(n: usize, steps: usize, mut f: impl FnMut(&[usize])) {
    fn rec(i: usize, remaining: usize, buf: &mut [usize], f: &mut dyn FnMut(&[usize])) {
        if i + 1 == buf.len() {
            buf[i] = remaining;
            f(buf);
            return;
        }
        for k in 0..=remaining {
            buf[i] = k;
            rec(i + 1, remaining - k, buf, f);
        }
    }
    let mut buf = vec![0; n];
    rec(0, steps, &mut buf, &mut f);
}
