//! JSON verification specs and their reports.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::dstar::{
    assumption1_threshold, check_assumption1, dstar_objective, lemma1_optimal_kl, lemma1_scan_kl,
    solve_dstar, DstarMethod,
};
use super::game::{ablation_no_real_elbo, verify_equilibrium, SearchOptions, LATTICE_STEPS};
use super::{total_variation, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Instance {
    pub p_data: f64,
    pub p_d: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyInstance {
    pub p_data: DiscreteDistribution,
    pub n_z: usize,
    pub gamma: f64,
    #[serde(default = "one")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

fn default_method() -> DstarMethod {
    DstarMethod::ExpGradient
}

/// One verification job, tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EquilibriumSpec {
    Dstar {
        p_data: DiscreteDistribution,
        gammas: Vec<f64>,
        #[serde(default = "default_method")]
        method: DstarMethod,
        #[serde(default = "one")]
        alpha: f64,
    },
    Verify {
        instances: Vec<VerifyInstance>,
        #[serde(default)]
        search: Option<SearchOptions>,
    },
    Prop1Sweep {
        p_data: DiscreteDistribution,
        #[serde(default = "one")]
        alpha: f64,
        gamma_max: f64,
        sweep_points: usize,
        tol: f64,
    },
    Lemma1Scan {
        #[serde(default)]
        instances: Vec<Lemma1Instance>,
        /// Extra random instances: `p_data, p_d ~ U(0.01, 1)`, `alpha ~ U(1, 3)`.
        #[serde(default)]
        random: usize,
        #[serde(default)]
        seed: u64,
        t_max: f64,
        step: f64,
    },
    Ablation {
        p_data: DiscreteDistribution,
        gammas: Vec<f64>,
    },
}

/// Runs a spec and returns its JSON report.
pub fn run_spec(spec: &EquilibriumSpec) -> Result<Value> {
    match spec {
        EquilibriumSpec::Dstar { p_data, gammas, method, alpha } => {
            let mut rows = Vec::new();
            for &g in gammas {
                let d = solve_dstar(p_data, g, *method)?;
                let a1 = check_assumption1(p_data, &d, *alpha)?;
                rows.push(json!({
                    "gamma": g,
                    "d_star": d,
                    "objective": dstar_objective(p_data.probs(), d.probs(), g),
                    "entropy": d.entropy(),
                    "tv_to_data": total_variation(p_data.probs(), d.probs()),
                    "assumption1_holds": a1.holds,
                }));
            }
            Ok(json!({"kind": "dstar", "p_data": p_data, "method": method, "alpha": alpha, "results": rows}))
        }
        EquilibriumSpec::Verify { instances, search } => {
            let opts = search.clone().unwrap_or_default();
            let reports = instances
                .iter()
                .map(|i| verify_equilibrium(&i.p_data, i.n_z, i.gamma, i.alpha, &opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(json!({"kind": "verify", "reports": reports}))
        }
        EquilibriumSpec::Prop1Sweep { p_data, alpha, gamma_max, sweep_points, tol } => {
            let method = if p_data.len() <= super::GRID_MAX_SUPPORT {
                DstarMethod::Grid
            } else {
                DstarMethod::ExpGradient
            };
            let r = assumption1_threshold(p_data, *alpha, *gamma_max, *sweep_points, *tol, method)?;
            let mut v = serde_json::to_value(r)?;
            v["kind"] = json!("prop1_sweep");
            Ok(v)
        }
        EquilibriumSpec::Lemma1Scan { instances, random, seed, t_max, step } => {
            if !(*step > 0.0 && *t_max > 0.0) {
                return Err(Error::Infeasible("lemma1 scan needs step > 0 and t_max > 0".into()));
            }
            let mut all = instances.clone();
            let mut rng = Rng::substream(*seed, "lemma1");
            for _ in 0..*random {
                all.push(Lemma1Instance {
                    p_data: rng.uniform_range(0.01, 1.0),
                    p_d: rng.uniform_range(0.01, 1.0),
                    alpha: rng.uniform_range(1.0, 3.0),
                });
            }
            let mut max_diff: f64 = 0.0;
            let mut rows = Vec::new();
            for i in &all {
                if !(i.p_data > 0.0) {
                    return Err(Error::Infeasible("scan instances need p_data > 0".into()));
                }
                let closed = lemma1_optimal_kl(i.p_data, i.p_d, i.alpha);
                let scan = lemma1_scan_kl(i.p_data, i.p_d, i.alpha, *t_max, *step);
                let diff = (closed - scan).abs();
                max_diff = max_diff.max(diff);
                rows.push(json!({
                    "p_data": i.p_data, "p_d": i.p_d, "alpha": i.alpha,
                    "a": i.p_d.powf(i.alpha + 1.0) / i.p_data,
                    "closed_form": closed, "scan": scan, "abs_diff": diff,
                }));
            }
            Ok(json!({"kind": "lemma1_scan", "t_max": t_max, "step": step, "max_abs_diff": max_diff, "rows": rows}))
        }
        EquilibriumSpec::Ablation { p_data, gammas } => {
            let reports = gammas
                .iter()
                .map(|&g| ablation_no_real_elbo(p_data, g, LATTICE_STEPS))
                .collect::<Result<Vec<_>>>()?;
            Ok(json!({"kind": "ablation", "reports": reports}))
        }
    }
}
