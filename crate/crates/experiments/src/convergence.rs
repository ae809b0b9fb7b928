//! Convergence of the absolutely continuous approximants to the optimal jump.
//!
//! For the optimal `tau*` on a GBM lattice, each `n` in the sweep gives
//! `xi_n` with push rate `n` switched on `ceil(1/sqrt(n))` time units before
//! `tau*`. The table records `|J(xi_n) - Phi|`, the `I_n / J_n / K_n` split and
//! the `K_n` bound `kappa n e^{-sqrt(n)}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stopflow::controls::{approx_g_n, approx_g_n_bound, approx_xi_n, approximation_terms};
use stopflow::model::gbm_lattice_with_cap;
use stopflow::stopping::kappa;
use stopflow::{lagged_information, randomized_value, snell_solve, GbmParams, LagSpec};

use crate::equivalence::limits;
use crate::record::{num, same};
use crate::{ExperimentConfig, RunError};

/// Allowed gap at the largest `n`.
pub const GAP_TOL: f64 = 1e-3;
/// `approx_g_n` must reproduce `Phi` to this when `tau* > 0`.
pub const EXACT_TOL: f64 = 1e-12;
/// Allowed increases of the gap along the sweep (`n > 1`).
pub const MAX_INVERSIONS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceRow {
    pub n: u32,
    pub lead_steps: usize,
    pub coarse_grid: bool,
    pub value: f64,
    pub error: f64,
    pub i_n: f64,
    pub j_n: f64,
    pub k_n: f64,
    /// `|I_n - Phi| + |J_n| + |K_n|`.
    pub bound: f64,
    /// `n e^{-sqrt(n)}`.
    pub k_rate: f64,
    /// `kappa * k_rate`.
    pub k_bound: f64,
    /// `kappa` times the mass left after `tau*`; always bounds `|K_n|`.
    pub tail_bound: f64,
    /// `E[sum k dG_n]` for the randomized approximant.
    pub g_value: f64,
    pub g_error: f64,
    pub g_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauMass {
    pub time: usize,
    pub prob: f64,
}

/// Distribution of a stopping time, by time.
pub fn tau_distribution(leaf_prob: &[f64], tau: &[usize]) -> Vec<TauMass> {
    let mut out: Vec<TauMass> = Vec::new();
    let mut order: Vec<usize> = (0..tau.len()).collect();
    order.sort_by_key(|&l| (tau[l], l));
    for l in order {
        match out.last_mut() {
            Some(m) if m.time == tau[l] => m.prob += leaf_prob[l],
            _ => out.push(TauMass {
                time: tau[l],
                prob: leaf_prob[l],
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceResults {
    pub gbm: GbmParams<f64>,
    pub lag: LagSpec,
    pub num_leaves: usize,
    pub phi: f64,
    pub kappa: f64,
    pub tau_distribution: Vec<TauMass>,
    pub rows: Vec<ConvergenceRow>,
    /// Increases of `error` from one `n > 1` to the next.
    pub inversions: usize,
}

impl ConvergenceResults {
    fn tau_positive(&self) -> bool {
        self.tau_distribution.iter().all(|m| m.time > 0)
    }

    fn count_inversions(rows: &[ConvergenceRow]) -> usize {
        let errs: Vec<f64> = rows.iter().filter(|r| r.n > 1).map(|r| r.error).collect();
        errs.windows(2).filter(|w| w[1] > w[0]).count()
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(last) = self.rows.last() {
            if last.error > GAP_TOL {
                out.push(format!(
                    "gap {:e} at the largest n = {} exceeds {GAP_TOL:e}",
                    last.error, last.n
                ));
            }
        }
        for r in &self.rows {
            if r.k_n.abs() > r.k_bound {
                out.push(format!(
                    "K_n bound violated at n = {}: |K_n| = {:e} > kappa n e^(-sqrt n) = {:e}",
                    r.n,
                    r.k_n.abs(),
                    r.k_bound
                ));
            }
            if self.tau_positive() && r.g_error > EXACT_TOL {
                out.push(format!(
                    "approx_g_n is off by {:e} at n = {} although tau* > 0",
                    r.g_error, r.n
                ));
            }
        }
        if self.inversions > MAX_INVERSIONS {
            out.push(format!(
                "gap increases {} times along the sweep (at most {MAX_INVERSIONS} allowed)",
                self.inversions
            ));
        }
        out
    }

    pub fn check_integrity(&self) -> Result<(), String> {
        for r in &self.rows {
            same(r.error, (r.value - self.phi).abs(), &format!("error at n = {}", r.n))?;
            same(
                r.g_error,
                (r.g_value - self.phi).abs(),
                &format!("g error at n = {}", r.n),
            )?;
            same(r.k_bound, self.kappa * r.k_rate, &format!("K bound at n = {}", r.n))?;
            same(
                r.bound,
                (r.i_n - self.phi).abs() + r.j_n.abs() + r.k_n.abs(),
                &format!("bound at n = {}", r.n),
            )?;
        }
        if self.rows.windows(2).any(|w| w[0].n >= w[1].n) {
            return Err("rows are not sorted by n".into());
        }
        if self.inversions != Self::count_inversions(&self.rows) {
            return Err("stored inversion count differs".into());
        }
        let mass: f64 = self.tau_distribution.iter().map(|m| m.prob).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(format!("tau distribution sums to {mass}"));
        }
        Ok(())
    }

    pub fn csv_header(&self) -> Vec<String> {
        [
            "n",
            "lead_steps",
            "value",
            "error",
            "i_n",
            "j_n",
            "k_n",
            "bound",
            "k_bound",
            "g_error",
        ]
        .map(String::from)
        .to_vec()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.lead_steps.to_string(),
                    num(r.value),
                    num(r.error),
                    num(r.i_n),
                    num(r.j_n),
                    num(r.k_n),
                    num(r.bound),
                    num(r.k_bound),
                    num(r.g_error),
                ]
            })
            .collect()
    }
}

pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceResults, RunError> {
    let gbm = config.gbm();
    let lag = config.lag();
    let lat = gbm_lattice_with_cap(&gbm, config.caps.max_gbm_shocks)?;
    let (tree, k) = (&lat.tree, &lat.reward);
    let info = lagged_information(tree, lag)?;
    let sol = snell_solve(tree, &info, k)?;
    let tau = &sol.optimal_tau;
    let kappa: f64 = kappa(tree, &info, k, &limits(config))?;

    let mut ns = config.sweep.n_values.clone();
    ns.sort_unstable();
    ns.dedup();
    let rows = ns
        .par_iter()
        .map(|&n| {
            let approx = approx_xi_n(tree, tau, n)?;
            let terms = approximation_terms(tree, k, tau, &approx)?;
            let g = approx_g_n(tree, tau, n)?;
            let g_value = randomized_value(tree, &info, k, &g)?;
            Ok(ConvergenceRow {
                n,
                lead_steps: approx.lead_steps,
                coarse_grid: approx.coarse_grid,
                value: terms.value,
                error: (terms.value - sol.value).abs(),
                i_n: terms.i_n,
                j_n: terms.j_n,
                k_n: terms.k_n,
                bound: (terms.i_n - sol.value).abs() + terms.j_n.abs() + terms.k_n.abs(),
                k_rate: terms.k_rate,
                k_bound: kappa * terms.k_rate,
                tail_bound: kappa * terms.tail_mass,
                g_value,
                g_error: (g_value - sol.value).abs(),
                g_bound: approx_g_n_bound(tree, k, tau, n)?,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let inversions = ConvergenceResults::count_inversions(&rows);
    Ok(ConvergenceResults {
        gbm,
        lag,
        num_leaves: tree.num_leaves(),
        phi: sol.value,
        kappa,
        tau_distribution: tau_distribution(tree.leaf_prob(), tau.as_slice()),
        rows,
        inversions,
    })
}
