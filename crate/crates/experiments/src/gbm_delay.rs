//! Selling an asset on a GBM lattice when prices are observed `delta` steps
//! late.
//!
//! For each delay the value comes from backward induction on the delayed
//! information and, independently, from the reduced full-information problem
//! with payoff `h(s) = E[k(s + delta) | F_s]`. The optimal time must be
//! `alpha + delta` with `alpha` optimal for `h`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stopflow::model::gbm_lattice_with_cap;
use stopflow::stopping::node_snell_value;
use stopflow::{delayed_reduction, lagged_information, snell_solve, GbmParams, LagSpec};

use crate::convergence::{tau_distribution, TauMass};
use crate::record::{num, opt_num, same};
use crate::{ExperimentConfig, RunError};

pub const VALUE_TOL: f64 = 1e-10;
/// Slack for the monotonicity of `Phi(delta)`.
pub const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayRow {
    pub delta: usize,
    pub phi: f64,
    /// Value through the reduced problem, `max(early, reduced)`.
    pub reduced_value: f64,
    pub reduction_gap: f64,
    /// Best deterministic stop before `delta`.
    pub early_time: Option<usize>,
    pub early_value: Option<f64>,
    /// Leaves with `tau* >= delta`, where `tau* = alpha + delta` is checked.
    pub leaves_checked: usize,
    pub tau_mismatches: usize,
    pub expected_tau: f64,
    pub tau_distribution: Vec<TauMass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmDelayResults {
    pub gbm: GbmParams<f64>,
    pub num_leaves: usize,
    /// Backward induction over lattice nodes, no information structure.
    pub snell_full_information: f64,
    pub rows: Vec<DelayRow>,
    /// `|Phi(0) - snell_full_information|` when 0 is in the sweep.
    pub phi0_gap: Option<f64>,
}

impl GbmDelayResults {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            if r.reduction_gap > VALUE_TOL {
                out.push(format!(
                    "delta = {}: delayed DP and reduced problem differ by {:e}",
                    r.delta, r.reduction_gap
                ));
            }
            if r.tau_mismatches > 0 {
                out.push(format!(
                    "delta = {}: tau* != alpha + delta on {} of {} leaves",
                    r.delta, r.tau_mismatches, r.leaves_checked
                ));
            }
        }
        for w in self.rows.windows(2) {
            if w[1].phi > w[0].phi + MONOTONE_TOL {
                out.push(format!(
                    "Phi increases from delta = {} ({}) to delta = {} ({})",
                    w[0].delta, w[0].phi, w[1].delta, w[1].phi
                ));
            }
        }
        if let Some(g) = self.phi0_gap {
            if g > VALUE_TOL {
                out.push(format!("Phi(0) differs from the full-information Snell value by {g:e}"));
            }
        }
        out
    }

    pub fn check_integrity(&self) -> Result<(), String> {
        for r in &self.rows {
            same(
                r.reduction_gap,
                (r.phi - r.reduced_value).abs(),
                &format!("reduction gap at delta = {}", r.delta),
            )?;
            let expected: f64 = r.tau_distribution.iter().map(|m| m.time as f64 * m.prob).sum();
            same(
                r.expected_tau,
                expected,
                &format!("expected tau at delta = {}", r.delta),
            )?;
        }
        if self.rows.windows(2).any(|w| w[0].delta >= w[1].delta) {
            return Err("rows are not sorted by delta".into());
        }
        let phi0 = self
            .rows
            .first()
            .filter(|r| r.delta == 0)
            .map(|r| (r.phi - self.snell_full_information).abs());
        match (phi0, self.phi0_gap) {
            (Some(a), Some(b)) => same(b, a, "Phi(0) gap"),
            (None, None) => Ok(()),
            _ => Err("Phi(0) gap present without delta = 0 or vice versa".into()),
        }
    }

    pub fn csv_header(&self) -> Vec<String> {
        ["delta", "phi", "reduced_value", "early_value", "expected_tau"]
            .map(String::from)
            .to_vec()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.delta.to_string(),
                    num(r.phi),
                    num(r.reduced_value),
                    opt_num(r.early_value),
                    num(r.expected_tau),
                ]
            })
            .collect()
    }
}

pub fn run_gbm_delay(config: &ExperimentConfig) -> Result<GbmDelayResults, RunError> {
    let gbm = config.gbm();
    let lat = gbm_lattice_with_cap(&gbm, config.caps.max_gbm_shocks)?;
    let (tree, k) = (&lat.tree, &lat.reward);
    let snell_full_information = node_snell_value(tree, k)?;

    let mut deltas = config.sweep.delta_values.clone();
    deltas.sort_unstable();
    deltas.dedup();
    let rows = deltas
        .par_iter()
        .map(|&delta| {
            let info = lagged_information(tree, LagSpec::delayed(delta))?;
            let sol = snell_solve(tree, &info, k)?;
            let red = delayed_reduction(tree, k, delta)?;
            let tau = sol.optimal_tau.as_slice();
            let checked: Vec<usize> = (0..tau.len()).filter(|&l| tau[l] >= delta).collect();
            let tau_mismatches = checked.iter().filter(|&&l| tau[l] != red.alpha.at(l) + delta).count();
            let dist = tau_distribution(tree.leaf_prob(), tau);
            Ok(DelayRow {
                delta,
                phi: sol.value,
                reduced_value: red.value,
                reduction_gap: (sol.value - red.value).abs(),
                early_time: red.early.map(|e| e.0),
                early_value: red.early.map(|e| e.1),
                leaves_checked: checked.len(),
                tau_mismatches,
                expected_tau: dist.iter().map(|m| m.time as f64 * m.prob).sum(),
                tau_distribution: dist,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let phi0_gap = rows
        .first()
        .filter(|r| r.delta == 0)
        .map(|r| (r.phi - snell_full_information).abs());
    Ok(GbmDelayResults {
        gbm,
        num_leaves: tree.num_leaves(),
        snell_full_information,
        rows,
        phi0_gap,
    })
}
