//! The entropy-regularized target `d* = argmin KL(p_data || p) + gamma H(p)`
//! and the closeness condition it must satisfy.

use serde::{Deserialize, Serialize};

use super::{entropy, for_each_lattice, kl, DiscreteDistribution};
use crate::error::{Error, Result};

/// Largest support the exhaustive lattice search accepts.
pub const GRID_MAX_SUPPORT: usize = 4;
/// Lattice steps per unit mass (resolution 1e-3).
pub const GRID_STEPS: usize = 1000;
/// Largest support the exponentiated-gradient solver accepts.
pub const EG_MAX_SUPPORT: usize = 64;
pub const EG_STEP: f64 = 1e-2;
pub const EG_MAX_ITERATIONS: usize = 100_000;
/// Stop when one step changes the objective by less than this.
pub const EG_TOLERANCE: f64 = 1e-12;
/// Stationarity required together with the objective test.
const EG_STATIONARITY: f64 = 1e-7;
/// Per-step cap on `|step * gradient|`, keeps updates finite near the boundary.
const EG_MAX_LOG_STEP: f64 = 1.0;
/// Log-mass below which an entry without data mass is treated as zero.
const EG_DEAD_LOG: f64 = -700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DstarMethod {
    /// Exhaustive 1e-3 lattice (n <= 4), refined by exponentiated gradient.
    Grid,
    /// Multi-start exponentiated gradient (n <= 64).
    ExpGradient,
}

/// `KL(p_data || p) + gamma H(p)`.
pub fn dstar_objective(p_data: &[f64], p: &[f64], gamma: f64) -> f64 {
    kl(p_data, p) + gamma * entropy(p)
}

pub fn solve_dstar(
    p_data: &DiscreteDistribution,
    gamma: f64,
    method: DstarMethod,
) -> Result<DiscreteDistribution> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Domain(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let n = p_data.len();
    let pd = p_data.probs();
    match method {
        DstarMethod::Grid => {
            if n > GRID_MAX_SUPPORT {
                return Err(Error::Infeasible(format!(
                    "lattice search supports n <= {GRID_MAX_SUPPORT}, got {n}"
                )));
            }
            let (grid_best, grid_obj) = grid_search(pd, gamma);
            let mut starts = eg_starts(pd);
            starts.insert(0, grid_best.clone());
            match best_descent(pd, gamma, starts) {
                Ok(r) if r.objective <= grid_obj => DiscreteDistribution::normalized(r.p),
                _ => DiscreteDistribution::normalized(grid_best),
            }
        }
        DstarMethod::ExpGradient => {
            if n > EG_MAX_SUPPORT {
                return Err(Error::Infeasible(format!(
                    "exponentiated gradient supports n <= {EG_MAX_SUPPORT}, got {n}"
                )));
            }
            let r = best_descent(pd, gamma, eg_starts(pd))?;
            DiscreteDistribution::normalized(r.p)
        }
    }
}

fn grid_search(pd: &[f64], gamma: f64) -> (Vec<f64>, f64) {
    let n = pd.len();
    let h = 1.0 / GRID_STEPS as f64;
    // Per-coordinate contribution to the objective at each lattice level.
    let table: Vec<Vec<f64>> = pd
        .iter()
        .map(|&a| {
            (0..=GRID_STEPS)
                .map(|k| {
                    let p = k as f64 * h;
                    let fit = if a == 0.0 {
                        0.0
                    } else if k == 0 {
                        f64::INFINITY
                    } else {
                        a * (a / p).ln()
                    };
                    let ent = if k == 0 { 0.0 } else { -p * p.ln() };
                    fit + gamma * ent
                })
                .collect()
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut arg = vec![0; n];
    for_each_lattice(n, GRID_STEPS, |k| {
        let v: f64 = k.iter().enumerate().map(|(i, &ki)| table[i][ki]).sum();
        if v < best {
            best = v;
            arg.copy_from_slice(k);
        }
    });
    (arg.iter().map(|&k| k as f64 * h).collect(), best)
}

fn eg_starts(pd: &[f64]) -> Vec<Vec<f64>> {
    let n = pd.len();
    let mut starts = vec![pd.to_vec(), vec![1.0 / n as f64; n]];
    for k in 0..n {
        let mut s: Vec<f64> = pd.iter().map(|v| 0.5 * v).collect();
        s[k] += 0.5;
        starts.push(s);
    }
    starts
}

struct Descent {
    p: Vec<f64>,
    objective: f64,
    grad_norm: f64,
    converged: bool,
}

/// Runs every start and keeps the lowest converged objective; the earliest
/// start wins ties.
fn best_descent(pd: &[f64], gamma: f64, starts: Vec<Vec<f64>>) -> Result<Descent> {
    let mut best: Option<Descent> = None;
    let mut worst_norm: f64 = 0.0;
    for s in starts {
        let r = exp_gradient(pd, gamma, &s);
        if !r.converged {
            log::debug!("exp-gradient start {s:?} stopped at gradient norm {:e}", r.grad_norm);
            worst_norm = worst_norm.max(r.grad_norm);
            continue;
        }
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    best.ok_or(Error::NonConvergence {
        iterations: EG_MAX_ITERATIONS,
        grad_norm: worst_norm,
    })
}

/// Multiplicative (mirror-descent) updates in log space.
fn exp_gradient(pd: &[f64], gamma: f64, start: &[f64]) -> Descent {
    let n = pd.len();
    let mut logp: Vec<f64> = start.iter().map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect();
    let mut p: Vec<f64> = start.to_vec();
    let mut obj = dstar_objective(pd, &p, gamma);
    let mut grad = vec![0.0; n];
    let mut norm = f64::INFINITY;
    if !obj.is_finite() {
        return Descent { p, objective: obj, grad_norm: norm, converged: false };
    }
    for _ in 0..EG_MAX_ITERATIONS {
        for i in 0..n {
            grad[i] = if p[i] > 0.0 { -pd[i] / p[i] - gamma * (logp[i] + 1.0) } else { 0.0 };
        }
        let mean: f64 = (0..n).map(|i| p[i] * grad[i]).sum();
        norm = (0..n).map(|i| (p[i] * (grad[i] - mean)).powi(2)).sum::<f64>().sqrt();

        for i in 0..n {
            if p[i] > 0.0 {
                logp[i] -= (EG_STEP * grad[i]).clamp(-EG_MAX_LOG_STEP, EG_MAX_LOG_STEP);
            }
        }
        let top = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logp.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        for i in 0..n {
            logp[i] -= lse;
            if logp[i] < EG_DEAD_LOG && pd[i] == 0.0 {
                logp[i] = f64::NEG_INFINITY;
            }
            p[i] = logp[i].exp();
        }
        let next = dstar_objective(pd, &p, gamma);
        let change = (obj - next).abs();
        obj = next;
        if change < EG_TOLERANCE && norm < EG_STATIONARITY {
            return Descent { p, objective: obj, grad_norm: norm, converged: true };
        }
    }
    Descent { p, objective: obj, grad_norm: norm, converged: false }
}

/// Closeness condition at one support point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub x: usize,
    pub p_data: f64,
    pub p_d: f64,
    /// `p_data^(1/(alpha+1))`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assumption1Report {
    pub alpha: f64,
    pub holds: bool,
    pub violations: Vec<usize>,
    pub points: Vec<PointCheck>,
}

/// Checks `d(x) <= p_data(x)^(1/(alpha+1))` wherever `p_data(x) > 0`.
pub fn check_assumption1(
    p_data: &DiscreteDistribution,
    d: &DiscreteDistribution,
    alpha: f64,
) -> Result<Assumption1Report> {
    if p_data.len() != d.len() {
        return Err(Error::Dimension(format!(
            "supports differ: {} vs {}",
            p_data.len(),
            d.len()
        )));
    }
    let points: Vec<PointCheck> = (0..p_data.len())
        .filter(|&x| p_data[x] > 0.0)
        .map(|x| {
            let bound = p_data[x].powf(1.0 / (alpha + 1.0));
            PointCheck {
                x,
                p_data: p_data[x],
                p_d: d[x],
                bound,
                holds: d[x] <= bound,
            }
        })
        .collect();
    let violations: Vec<usize> = points.iter().filter(|c| !c.holds).map(|c| c.x).collect();
    Ok(Assumption1Report {
        alpha,
        holds: violations.is_empty(),
        violations,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub p_data: DiscreteDistribution,
    pub alpha: f64,
    pub gamma_max: f64,
    /// `(gamma, holds)` for the coarse sweep.
    pub sweep: Vec<(f64, bool)>,
    /// Largest gamma shown to satisfy the assumption below the first failure.
    pub holds_up_to: f64,
    /// Smallest gamma shown to violate it; `None` if none did up to `gamma_max`.
    pub first_violation: Option<f64>,
}

/// Sweeps gamma upward from 0 and bisects the first change from holding to
/// violated.
pub fn assumption1_threshold(
    p_data: &DiscreteDistribution,
    alpha: f64,
    gamma_max: f64,
    sweep_points: usize,
    tol: f64,
    method: DstarMethod,
) -> Result<ThresholdReport> {
    if !(gamma_max > 0.0) || sweep_points < 2 || !(tol > 0.0) {
        return Err(Error::Infeasible(
            "threshold search needs gamma_max > 0, at least 2 sweep points and tol > 0".into(),
        ));
    }
    let holds = |g: f64| -> Result<bool> {
        let d = solve_dstar(p_data, g, method)?;
        Ok(check_assumption1(p_data, &d, alpha)?.holds)
    };
    let mut sweep = Vec::with_capacity(sweep_points);
    let mut bracket = None;
    let mut last_ok = 0.0;
    for i in 0..sweep_points {
        let g = gamma_max * i as f64 / (sweep_points - 1) as f64;
        let ok = holds(g)?;
        sweep.push((g, ok));
        if ok {
            last_ok = g;
        } else {
            bracket = Some((last_ok, g));
            break;
        }
    }
    let (holds_up_to, first_violation) = match bracket {
        None => (last_ok, None),
        Some((mut lo, mut hi)) => {
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if holds(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (lo, Some(hi))
        }
    };
    Ok(ThresholdReport {
        p_data: p_data.clone(),
        alpha,
        gamma_max,
        sweep,
        holds_up_to,
        first_violation,
    })
}

/// Optimal posterior gap `t* = KL(q(.|x) || p_d(.|x))` for the encoder at one
/// point, from maximizing `-t - (a/alpha) exp(-alpha t)` with
/// `a = p_d(x)^(alpha+1) / p_data(x)`.
///
/// Where `p_data(x) = 0` the encoder only sees the penalty
/// `-(1/alpha) p_d(x)^(alpha+1) exp(-alpha t)`, which keeps growing with `t`
/// whenever `p_d(x) > 0`; the supremum is then at infinity. With
/// `p_d(x) = 0` as well the objective is flat and 0 is returned.
pub fn lemma1_optimal_kl(p_data_x: f64, p_d_x: f64, alpha: f64) -> f64 {
    if p_data_x <= 0.0 {
        return if p_d_x > 0.0 { f64::INFINITY } else { 0.0 };
    }
    let a = p_d_x.powf(alpha + 1.0) / p_data_x;
    (a.ln() / alpha).max(0.0)
}

/// The same optimum located by scanning `t` over `[0, t_max]`.
pub fn lemma1_scan_kl(p_data_x: f64, p_d_x: f64, alpha: f64, t_max: f64, step: f64) -> f64 {
    let a = p_d_x.powf(alpha + 1.0) / p_data_x;
    let steps = (t_max / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=steps {
        let t = i as f64 * step;
        let g = -t - a / alpha * (-alpha * t).exp();
        if g > best.0 {
            best = (g, t);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::total_variation;
    use crate::rng::Rng;

    fn dist(v: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(v.to_vec()).unwrap()
    }

    /// Scalar oracle for n = 2: scan p on a 1e-4 grid.
    fn scalar_scan(pd: f64, gamma: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..10_000 {
            let p = i as f64 * 1e-4;
            let v = dstar_objective(&[pd, 1.0 - pd], &[p, 1.0 - p], gamma);
            if v < best.0 {
                best = (v, p);
            }
        }
        best
    }

    #[test]
    fn gamma_zero_returns_data() {
        let mut rng = Rng::seed_from_u64(1);
        for n in [2, 3, 4] {
            let pd = DiscreteDistribution::random(n, &mut rng);
            for m in [DstarMethod::Grid, DstarMethod::ExpGradient] {
                let d = solve_dstar(&pd, 0.0, m).unwrap();
                assert!(total_variation(pd.probs(), d.probs()) < 1e-6, "{m:?}");
            }
        }
    }

    #[test]
    fn symmetric_pair_small_gamma_stays_put() {
        let d = solve_dstar(&dist(&[0.5, 0.5]), 0.5, DstarMethod::Grid).unwrap();
        let (_, p) = scalar_scan(0.5, 0.5);
        assert!((d[0] - 0.5).abs() < 1e-3);
        assert!((p - 0.5).abs() < 1e-3);
    }

    #[test]
    fn symmetric_pair_large_gamma_breaks_symmetry() {
        let pd = dist(&[0.5, 0.5]);
        let (obj, p) = scalar_scan(0.5, 2.0);
        assert!(-(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) < 2f64.ln() - 0.05);
        for m in [DstarMethod::Grid, DstarMethod::ExpGradient] {
            let d = solve_dstar(&pd, 2.0, m).unwrap();
            assert!(d.entropy() < 2f64.ln() - 0.05, "{m:?} gave {:?}", d.probs());
            assert!(dstar_objective(pd.probs(), d.probs(), 2.0) <= obj + 1e-6);
            assert!((d[0] - p).abs() < 2e-3 || (d[0] - (1.0 - p)).abs() < 2e-3);
        }
    }

    #[test]
    fn methods_agree() {
        let mut rng = Rng::seed_from_u64(9);
        for _ in 0..5 {
            let pd = DiscreteDistribution::random(3, &mut rng);
            for gamma in [0.3, 1.0] {
                let a = solve_dstar(&pd, gamma, DstarMethod::Grid).unwrap();
                let b = solve_dstar(&pd, gamma, DstarMethod::ExpGradient).unwrap();
                let fa = dstar_objective(pd.probs(), a.probs(), gamma);
                let fb = dstar_objective(pd.probs(), b.probs(), gamma);
                assert!((fa - fb).abs() < 1e-6, "{fa} vs {fb}");
            }
        }
    }

    #[test]
    fn off_support_mass_vanishes() {
        let pd = dist(&[0.6, 0.4, 0.0]);
        let d = solve_dstar(&pd, 0.5, DstarMethod::ExpGradient).unwrap();
        assert!(d[2] < 1e-12);
    }

    #[test]
    fn support_limits() {
        let pd = DiscreteDistribution::uniform(5);
        assert!(matches!(solve_dstar(&pd, 1.0, DstarMethod::Grid), Err(Error::Infeasible(_))));
        let pd = DiscreteDistribution::uniform(65);
        assert!(matches!(
            solve_dstar(&pd, 1.0, DstarMethod::ExpGradient),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            solve_dstar(&DiscreteDistribution::uniform(2), -1.0, DstarMethod::Grid),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn assumption1_examples() {
        let r = check_assumption1(&dist(&[0.9, 0.1]), &dist(&[0.99, 0.01]), 1.0).unwrap();
        assert!(!r.holds);
        assert_eq!(r.violations, vec![0]);
        assert!((r.points[0].bound - 0.9f64.sqrt()).abs() < 1e-15);

        let mut rng = Rng::seed_from_u64(4);
        for alpha in [1.0, 2.0, 3.5] {
            let pd = DiscreteDistribution::random(4, &mut rng);
            assert!(check_assumption1(&pd, &pd, alpha).unwrap().holds);
        }
        assert!(check_assumption1(&dist(&[1.0]), &dist(&[0.5, 0.5]), 1.0).is_err());
    }

    #[test]
    fn threshold_for_skewed_pair() {
        let pd = dist(&[0.7, 0.3]);
        let r = assumption1_threshold(&pd, 1.0, 4.0, 9, 1e-3, DstarMethod::Grid).unwrap();
        let hi = r.first_violation.expect("large gamma collapses onto the heavier point");
        assert!(r.holds_up_to > 0.0 && hi - r.holds_up_to <= 1e-3);
        for i in 0..10 {
            let g = r.holds_up_to * i as f64 / 10.0;
            let d = solve_dstar(&pd, g, DstarMethod::Grid).unwrap();
            assert!(check_assumption1(&pd, &d, 1.0).unwrap().holds, "gamma {g}");
        }
        let d = solve_dstar(&pd, hi, DstarMethod::Grid).unwrap();
        assert!(!check_assumption1(&pd, &d, 1.0).unwrap().holds);
    }

    #[test]
    fn lemma1_closed_form() {
        assert!((lemma1_optimal_kl(0.25, 0.75, 1.0) - 2.25f64.ln()).abs() < 1e-15);
        assert_eq!(lemma1_optimal_kl(0.5, 0.5, 1.0), 0.0);
        assert_eq!(lemma1_optimal_kl(0.0, 0.0, 1.0), 0.0);
        assert_eq!(lemma1_optimal_kl(0.0, 0.2, 1.0), f64::INFINITY);
        let t = lemma1_scan_kl(0.25, 0.75, 1.0, 10.0, 1e-4);
        assert!((t - 2.25f64.ln()).abs() < 1e-3);
    }
}
