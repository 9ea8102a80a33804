//! The encoder/decoder game on tables and an exhaustive search for
//! profitable unilateral deviations.

use serde::{Deserialize, Serialize};

use super::dstar::{check_assumption1, dstar_objective, solve_dstar, Assumption1Report, DstarMethod};
use super::{entropy, for_each_lattice, kl, total_variation, DiscreteDistribution, TabularModel};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Lattice steps per unit mass for deviation searches (resolution 1e-2).
pub const LATTICE_STEPS: usize = 100;
const MAX_NX: usize = 4;
const MAX_NZ: usize = 3;

/// `W(x; d, q) = E_q[log p_d(x|z)] - KL(q || p(z))`.
pub fn elbo(model: &TabularModel, q: &[f64], x: usize) -> f64 {
    rec_term(model.decoder(), q, x) - kl(q, model.prior().probs())
}

fn rec_term(rows: &[impl AsRef<[f64]>], q: &[f64], x: usize) -> f64 {
    let mut s = 0.0;
    for (z, &w) in q.iter().enumerate() {
        if w > 0.0 {
            let l = rows[z].as_ref()[x];
            if l <= 0.0 {
                return f64::NEG_INFINITY;
            }
            s += w * l.ln();
        }
    }
    s
}

impl AsRef<[f64]> for DiscreteDistribution {
    fn as_ref(&self) -> &[f64] {
        self.probs()
    }
}

fn encoder_term(p_data_x: f64, p_d_x: f64, w: f64, alpha: f64) -> f64 {
    let mut t = 0.0;
    if p_data_x > 0.0 {
        t += p_data_x * w;
    }
    if p_d_x > 0.0 {
        t -= p_d_x * (alpha * w).exp() / alpha;
    }
    t
}

/// `L_q = E_data[W] - (1/alpha) E_{p_d}[exp(alpha W)]`.
pub fn encoder_loss(
    p_data: &DiscreteDistribution,
    model: &TabularModel,
    q: &[DiscreteDistribution],
    alpha: f64,
) -> f64 {
    let px = model.marginal();
    (0..model.n_x())
        .map(|x| encoder_term(p_data[x], px[x], elbo(model, q[x].probs(), x), alpha))
        .sum()
}

fn weighted_elbo_sum(p_data: &[f64], p_d: &[f64], w: impl Fn(usize) -> f64, gamma: f64) -> f64 {
    let mut s = 0.0;
    for x in 0..p_data.len() {
        let weight = p_data[x] + if gamma > 0.0 { gamma * p_d[x] } else { 0.0 };
        if weight > 0.0 {
            s += weight * w(x);
        }
    }
    s
}

/// `L_d = E_data[W] + gamma E_{p_d}[W]`.
pub fn decoder_loss(
    p_data: &DiscreteDistribution,
    model: &TabularModel,
    q: &[DiscreteDistribution],
    gamma: f64,
) -> f64 {
    let px = model.marginal();
    weighted_elbo_sum(p_data.probs(), px.probs(), |x| elbo(model, q[x].probs(), x), gamma)
}

/// The decoder loss rewritten through `W = log p_d(x) - KL(q || p_d(z|x))`:
/// `-KL(p_data || p_d) + E_data[log p_data] - gamma H(p_d)
///  - E_data[KL(q || p_d(z|x))] - gamma E_{p_d}[KL(q || p_d(z|x))]`.
pub fn decoder_loss_identity(
    p_data: &DiscreteDistribution,
    model: &TabularModel,
    q: &[DiscreteDistribution],
    gamma: f64,
) -> f64 {
    let px = model.marginal();
    let post = model.posterior();
    let gap = |x: usize| kl(q[x].probs(), post[x].probs());
    let neg_entropy_data = -entropy(p_data.probs());
    let mut v = -kl(p_data.probs(), px.probs()) + neg_entropy_data - gamma * entropy(px.probs());
    for x in 0..model.n_x() {
        if p_data[x] > 0.0 {
            v -= p_data[x] * gap(x);
        }
        if gamma > 0.0 && px[x] > 0.0 {
            v -= gamma * px[x] * gap(x);
        }
    }
    v
}

/// Moves `tv` of total variation from `q` onto its least likely value.
pub fn shift_mass(q: &DiscreteDistribution, tv: f64) -> Result<DiscreteDistribution> {
    let (k, &qk) = q
        .probs()
        .iter()
        .enumerate()
        .fold((0, &f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    if !(tv >= 0.0 && tv <= 1.0 - qk) {
        return Err(Error::Domain(format!("cannot shift {tv} of mass onto entry {k}")));
    }
    let lambda = tv / (1.0 - qk);
    let mut p: Vec<f64> = q.probs().iter().map(|v| (1.0 - lambda) * v).collect();
    p[k] += lambda;
    DiscreteDistribution::normalized(p)
}

/// Largest gain one player found against a fixed opponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerReport {
    /// Candidate loss (to be maximized by the player).
    pub loss: f64,
    /// Best deviation loss minus candidate loss, floored at zero.
    pub max_improvement: f64,
    pub deviations_evaluated: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Neither player gains more than the slack.
    Verified,
    /// Some player has a profitable deviation.
    ImprovementFound,
    /// `d*` breaks the closeness condition, so the theorem does not apply.
    PreconditionFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub lattice_steps: usize,
    /// Random joint decoder tables tried on top of the lattices.
    pub decoder_samples: usize,
    pub seed: u64,
    /// Gains at or below this are attributed to rounding.
    pub slack: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            lattice_steps: LATTICE_STEPS,
            decoder_samples: 20_000,
            seed: 0,
            slack: 1e-6,
        }
    }
}

/// Searches for unilateral deviations from `(q, model)`.
///
/// The encoder loss separates over `x`, so each row of `q` is searched on its
/// own lattice and the per-row gains add up. The decoder is searched one row
/// at a time, with all rows tied together, and with random full tables.
pub fn verify_candidate(
    p_data: &DiscreteDistribution,
    model: &TabularModel,
    q: &[DiscreteDistribution],
    gamma: f64,
    alpha: f64,
    opts: &SearchOptions,
) -> Result<(PlayerReport, PlayerReport)> {
    let (n_x, n_z) = (model.n_x(), model.n_z());
    if p_data.len() != n_x || q.len() != n_x || q.iter().any(|r| r.len() != n_z) {
        return Err(Error::Dimension("candidate does not match the data support".into()));
    }
    if opts.lattice_steps == 0 {
        return Err(Error::Infeasible("lattice_steps must be positive".into()));
    }
    let h = 1.0 / opts.lattice_steps as f64;
    let px = model.marginal();
    let prior = model.prior().probs();

    // Encoder.
    let mut enc_gain = 0.0;
    let mut enc_count = 0u64;
    let mut cand = vec![0.0; n_z];
    for x in 0..n_x {
        if p_data[x] == 0.0 && px[x] == 0.0 {
            continue;
        }
        let base = encoder_term(p_data[x], px[x], elbo(model, q[x].probs(), x), alpha);
        let mut best = 0.0f64;
        for_each_lattice(n_z, opts.lattice_steps, |k| {
            for (c, &ki) in cand.iter_mut().zip(k) {
                *c = ki as f64 * h;
            }
            let w = rec_term(model.decoder(), &cand, x) - kl(&cand, prior);
            let gain = encoder_term(p_data[x], px[x], w, alpha) - base;
            enc_count += 1;
            if gain > best {
                best = gain;
            }
        });
        enc_gain += best;
    }

    // Decoder.
    let q_kl: Vec<f64> = q.iter().map(|r| kl(r.probs(), prior)).collect();
    let eval = |rows: &[Vec<f64>]| -> f64 {
        let p_d: Vec<f64> = (0..n_x)
            .map(|x| (0..n_z).map(|z| prior[z] * rows[z][x]).sum())
            .collect();
        weighted_elbo_sum(
            p_data.probs(),
            &p_d,
            |x| rec_term(rows, q[x].probs(), x) - q_kl[x],
            gamma,
        )
    };
    let base_rows: Vec<Vec<f64>> = model.decoder().iter().map(|r| r.probs().to_vec()).collect();
    let dec_base = eval(&base_rows);
    let mut dec_best = dec_base;
    let mut dec_count = 0u64;
    let mut rows = base_rows.clone();
    for z in 0..n_z {
        for_each_lattice(n_x, opts.lattice_steps, |k| {
            for (c, &ki) in rows[z].iter_mut().zip(k) {
                *c = ki as f64 * h;
            }
            dec_best = dec_best.max(eval(&rows));
            dec_count += 1;
        });
        rows[z].clone_from(&base_rows[z]);
    }
    for_each_lattice(n_x, opts.lattice_steps, |k| {
        let row: Vec<f64> = k.iter().map(|&ki| ki as f64 * h).collect();
        let tied = vec![row; n_z];
        dec_best = dec_best.max(eval(&tied));
        dec_count += 1;
    });
    let mut rng = Rng::substream(opts.seed, "equilibrium");
    for _ in 0..opts.decoder_samples {
        let rand_rows: Vec<Vec<f64>> = (0..n_z)
            .map(|_| DiscreteDistribution::random(n_x, &mut rng).probs().to_vec())
            .collect();
        dec_best = dec_best.max(eval(&rand_rows));
        dec_count += 1;
    }

    Ok((
        PlayerReport {
            loss: encoder_loss(p_data, model, q, alpha),
            max_improvement: enc_gain,
            deviations_evaluated: enc_count,
        },
        PlayerReport {
            loss: dec_base,
            max_improvement: (dec_best - dec_base).max(0.0),
            deviations_evaluated: dec_count,
        },
    ))
}

/// Tabular model whose marginal is `target`, with a uniform prior over
/// `n_z` values and a decoder that genuinely depends on `z`.
///
/// The joint is half the north-west-corner coupling of `target` and the
/// prior, half their product, so every `x` in the support of `target` is
/// reachable from every `z`.
pub fn equilibrium_candidate(
    target: &DiscreteDistribution,
    n_z: usize,
) -> Result<(TabularModel, Vec<DiscreteDistribution>)> {
    if n_z == 0 {
        return Err(Error::Infeasible("n_z must be positive".into()));
    }
    let n_x = target.len();
    let prior = DiscreteDistribution::uniform(n_z);
    let mut joint = vec![vec![0.0; n_x]; n_z];
    let (mut x, mut z) = (0, 0);
    let (mut rx, mut rz) = (target[0], prior[0]);
    while x < n_x && z < n_z {
        let m = rx.min(rz);
        joint[z][x] += 0.5 * m;
        rx -= m;
        rz -= m;
        if rx <= 1e-15 {
            x += 1;
            if x < n_x {
                rx = target[x];
            }
        } else {
            z += 1;
            if z < n_z {
                rz = prior[z];
            }
        }
    }
    for (z, row) in joint.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v += 0.5 * target[x] * prior[z];
        }
    }
    let rows = joint
        .into_iter()
        .map(DiscreteDistribution::normalized)
        .collect::<Result<Vec<_>>>()?;
    let model = TabularModel::new(prior, rows)?;
    let q = model.posterior();
    Ok((model, q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub status: Status,
    pub p_data: DiscreteDistribution,
    pub gamma: f64,
    pub alpha: f64,
    pub n_z: usize,
    pub d_star: DiscreteDistribution,
    pub dstar_objective: f64,
    /// Marginal of the constructed decoder, equal to `d_star` up to rounding.
    pub decoder_marginal: DiscreteDistribution,
    pub assumption1: Assumption1Report,
    pub lattice_resolution: f64,
    pub slack: f64,
    pub encoder: PlayerReport,
    pub decoder: PlayerReport,
}

/// Solves for `d*`, builds `(q* = p_{d*}(z|x), d*)` and searches for
/// profitable deviations.
pub fn verify_equilibrium(
    p_data: &DiscreteDistribution,
    n_z: usize,
    gamma: f64,
    alpha: f64,
    opts: &SearchOptions,
) -> Result<EquilibriumReport> {
    if p_data.len() > MAX_NX || n_z > MAX_NZ || n_z == 0 {
        return Err(Error::Infeasible(format!(
            "verification supports n_x <= {MAX_NX} and 1 <= n_z <= {MAX_NZ}, got {} and {n_z}",
            p_data.len()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Infeasible(format!("alpha must be positive, got {alpha}")));
    }
    let d_star = solve_dstar(p_data, gamma, DstarMethod::Grid)?;
    let assumption1 = check_assumption1(p_data, &d_star, alpha)?;
    let (model, q) = equilibrium_candidate(&d_star, n_z)?;
    let (encoder, decoder) = verify_candidate(p_data, &model, &q, gamma, alpha, opts)?;
    let status = if !assumption1.holds {
        Status::PreconditionFailed
    } else if encoder.max_improvement > opts.slack || decoder.max_improvement > opts.slack {
        Status::ImprovementFound
    } else {
        Status::Verified
    };
    Ok(EquilibriumReport {
        status,
        p_data: p_data.clone(),
        gamma,
        alpha,
        n_z,
        dstar_objective: dstar_objective(p_data.probs(), d_star.probs(), gamma),
        decoder_marginal: model.marginal(),
        d_star,
        assumption1,
        lattice_resolution: 1.0 / opts.lattice_steps as f64,
        slack: opts.slack,
        encoder,
        decoder,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub p_d: Vec<f64>,
    pub entropy: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub p_data: DiscreteDistribution,
    pub gamma: f64,
    pub lattice_resolution: f64,
    /// Best response when the data ELBO term is dropped from the decoder loss.
    pub truncated: BestResponse,
    /// Max minus min of the truncated objective over the lattice.
    pub truncated_spread: f64,
    /// Best response under the full decoder loss.
    pub full: BestResponse,
    pub full_tv_to_data: f64,
    pub data_entropy: f64,
}

/// Decoder best responses with and without the data term.
///
/// The encoder best-responds with the exact posterior, so `W(x) = log p_d(x)`
/// and both losses depend on the decoder only through its marginal, which is
/// searched on a lattice. Ties go to the lowest lexicographic index.
pub fn ablation_no_real_elbo(
    p_data: &DiscreteDistribution,
    gamma: f64,
    lattice_steps: usize,
) -> Result<AblationReport> {
    let n = p_data.len();
    if n > MAX_NX || lattice_steps == 0 {
        return Err(Error::Infeasible(format!(
            "ablation supports n <= {MAX_NX} and a positive lattice, got n = {n}"
        )));
    }
    let h = 1.0 / lattice_steps as f64;
    let pd = p_data.probs();
    let mut p = vec![0.0; n];
    let mut trunc = (f64::NEG_INFINITY, vec![0.0; n]);
    let mut trunc_min = f64::INFINITY;
    let mut full = (f64::NEG_INFINITY, vec![0.0; n]);
    for_each_lattice(n, lattice_steps, |k| {
        for (c, &ki) in p.iter_mut().zip(k) {
            *c = ki as f64 * h;
        }
        let h_p = entropy(&p);
        // gamma E_{p_d}[log p_d]
        let t = if gamma > 0.0 { -gamma * h_p } else { 0.0 };
        // E_data[log p_d] + gamma E_{p_d}[log p_d]
        let f = -kl(pd, &p) - entropy(pd) - gamma * h_p;
        if t > trunc.0 {
            trunc = (t, p.clone());
        }
        trunc_min = trunc_min.min(t);
        if f > full.0 {
            full = (f, p.clone());
        }
    });
    Ok(AblationReport {
        p_data: p_data.clone(),
        gamma,
        lattice_resolution: h,
        truncated_spread: trunc.0 - trunc_min,
        truncated: BestResponse {
            entropy: entropy(&trunc.1),
            p_d: trunc.1,
            objective: trunc.0,
        },
        full_tv_to_data: total_variation(&full.1, pd),
        full: BestResponse {
            entropy: entropy(&full.1),
            p_d: full.1,
            objective: full.0,
        },
        data_entropy: entropy(pd),
    })
}
