//! Optimal stopping, randomized stopping and singular control give the same
//! value.
//!
//! Per instance: `Phi` by exhaustive search and, when the information is
//! nested, by backward induction; `Lambda` and `Psi` by evaluating the lifted
//! optimizers; the time-change form of `Lambda`; and the best value among
//! random strict controls, which must not beat `Phi`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stopflow::controls::{random_finite_xi, random_randomized_control, time_change_value};
use stopflow::model::{random_tree_with, t2, RandomTreeSpec};
use stopflow::{
    brute_force_optimal, lagged_information, optimize_randomized, optimize_singular, randomized_value, singular_value,
    snell_solve, AdaptedProcess, EnumerationLimits, InformationStructure, LagSpec, ScenarioTree, SingularControl,
};

use crate::record::{num, opt_num, same};
use crate::{seeded_rng, ExperimentConfig, RunError};

/// Exhaustive search against backward induction.
pub const BRUTE_FORCE_TOL: f64 = 1e-12;
/// Any other pair of values.
pub const VALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceInstance {
    pub key: String,
    pub num_leaves: usize,
    pub num_periods: usize,
    pub filtration: bool,
    pub candidates: u64,
    pub phi_brute_force: f64,
    pub phi_dp: Option<f64>,
    pub lambda: f64,
    pub psi: f64,
    pub lambda_time_change: f64,
    /// Best value over the sampled random controls.
    pub best_sampled: Option<f64>,
    /// `max_t k(t)` on single-path trees.
    pub path_max: Option<f64>,
    pub optimal_tau: Vec<usize>,
    pub gap_brute_force_dp: Option<f64>,
    /// Largest of the value gaps and the sampled excess over `Phi`.
    pub max_gap: f64,
}

impl EquivalenceInstance {
    fn recompute(&self) -> (Option<f64>, f64) {
        let phi = self.phi_brute_force;
        let bf_dp = self.phi_dp.map(|dp| (phi - dp).abs());
        let mut gap = (phi - self.lambda)
            .abs()
            .max((phi - self.psi).abs())
            .max((phi - self.lambda_time_change).abs());
        if let Some(best) = self.best_sampled {
            gap = gap.max(best - phi);
        }
        if let Some(m) = self.path_max {
            gap = gap.max((phi - m).abs());
        }
        if let Some(d) = bf_dp {
            gap = gap.max(d);
        }
        (bf_dp, gap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceResults {
    pub instances: Vec<EquivalenceInstance>,
    pub max_gap: f64,
    pub max_gap_brute_force_dp: f64,
}

impl EquivalenceResults {
    fn from_instances(mut instances: Vec<EquivalenceInstance>) -> Self {
        instances.sort_by(|a, b| a.key.cmp(&b.key));
        let max_gap = instances.iter().map(|i| i.max_gap).fold(0.0, f64::max);
        let max_gap_brute_force_dp = instances
            .iter()
            .filter_map(|i| i.gap_brute_force_dp)
            .fold(0.0, f64::max);
        Self {
            instances,
            max_gap,
            max_gap_brute_force_dp,
        }
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in &self.instances {
            if let Some(d) = i.gap_brute_force_dp {
                if d > BRUTE_FORCE_TOL {
                    out.push(format!(
                        "{}: brute force and DP differ by {d:e} > {BRUTE_FORCE_TOL:e}",
                        i.key
                    ));
                }
            }
            if i.max_gap > VALUE_TOL {
                out.push(format!("{}: value gap {:e} > {VALUE_TOL:e}", i.key, i.max_gap));
            }
        }
        out
    }

    pub fn check_integrity(&self) -> Result<(), String> {
        for i in &self.instances {
            let (bf_dp, gap) = i.recompute();
            match (bf_dp, i.gap_brute_force_dp) {
                (Some(a), Some(b)) => same(b, a, &format!("{} brute force/DP gap", i.key))?,
                (None, None) => {}
                _ => return Err(format!("{}: DP value and its gap disagree on presence", i.key)),
            }
            same(i.max_gap, gap, &format!("{} max gap", i.key))?;
        }
        let again = Self::from_instances(self.instances.clone());
        if again != *self {
            return Err("summary does not match the instances".into());
        }
        Ok(())
    }

    pub fn csv_header(&self) -> Vec<String> {
        [
            "key",
            "leaves",
            "periods",
            "phi_brute_force",
            "phi_dp",
            "lambda",
            "psi",
            "gap_brute_force_dp",
            "max_gap",
        ]
        .map(String::from)
        .to_vec()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.instances
            .iter()
            .map(|i| {
                vec![
                    i.key.clone(),
                    i.num_leaves.to_string(),
                    i.num_periods.to_string(),
                    num(i.phi_brute_force),
                    opt_num(i.phi_dp),
                    num(i.lambda),
                    num(i.psi),
                    opt_num(i.gap_brute_force_dp),
                    num(i.max_gap),
                ]
            })
            .collect()
    }
}

/// One stopping problem to compare on.
pub struct Problem {
    pub key: String,
    pub tree: ScenarioTree<f64>,
    pub info: InformationStructure,
    pub reward: AdaptedProcess<f64>,
    /// Seed for the random controls.
    pub seed: u64,
}

/// Single-leaf tree: the stopper sees the whole path, so `Phi = max_t k(t)`.
pub fn deterministic_path(rewards: &[f64]) -> Result<(ScenarioTree<f64>, AdaptedProcess<f64>), RunError> {
    let n = rewards.len() - 1;
    let parents = std::iter::once(None).chain((0..n).map(Some)).collect();
    let tree = ScenarioTree::new(n, 1.0 / n as f64, parents, vec![1.0; n + 1])?;
    let reward = AdaptedProcess::from_rows(rewards.iter().map(|&r| vec![r]).collect())?;
    Ok((tree, reward))
}

const PATH_REWARDS: [f64; 6] = [1.5, -2.0, 4.0, 3.25, 0.0, 2.0];

/// The fixed problems every equivalence run includes.
pub fn fixtures(seed: u64) -> Result<Vec<Problem>, RunError> {
    let fx = t2::<f64>();
    let delayed = lagged_information(&fx.tree, LagSpec::delayed(1))?;
    let (path_tree, path_reward) = deterministic_path(&PATH_REWARDS)?;
    Ok(vec![
        Problem {
            key: "t2-full".into(),
            info: fx.tree.filtration(),
            tree: fx.tree.clone(),
            reward: fx.reward.clone(),
            seed,
        },
        Problem {
            key: "t2-delay-1".into(),
            info: delayed,
            tree: fx.tree,
            reward: fx.reward,
            seed: seed.wrapping_add(1),
        },
        Problem {
            key: "path".into(),
            info: path_tree.filtration(),
            tree: path_tree,
            reward: path_reward,
            seed: seed.wrapping_add(2),
        },
    ])
}

/// Seeded random trees with nested information, keyed so that they sort by
/// seed.
pub fn random_problems(config: &ExperimentConfig) -> Result<Vec<Problem>, RunError> {
    let r = &config.model.random;
    (0..config.sweep.instances as u64)
        .into_par_iter()
        .map(|i| {
            let seed = r.seed.wrapping_add(i);
            let spec = RandomTreeSpec {
                filtration_prob: 1.0,
                max_leaves: config.caps.max_leaves,
                max_stopping_times: config.caps.max_stopping_times,
                ..RandomTreeSpec::new(seed, r.max_depth, r.max_branching)
            };
            let inst = random_tree_with::<f64>(&spec)?;
            Ok(Problem {
                key: format!("random-{seed:020}"),
                tree: inst.tree,
                info: inst.info,
                reward: inst.reward,
                seed,
            })
        })
        .collect()
}

pub fn limits(config: &ExperimentConfig) -> EnumerationLimits {
    EnumerationLimits {
        max_leaves: config.caps.max_leaves,
        max_periods: config.caps.max_periods,
        max_count: config.caps.max_stopping_times,
    }
}

/// `xi` with the remaining mass spent at the horizon.
fn spend_at_horizon(xi: &SingularControl<f64>) -> Result<SingularControl<f64>, RunError> {
    let n = xi.num_periods();
    let rows = (0..=n)
        .map(|t| {
            (0..xi.num_leaves())
                .map(|l| if t == n { f64::INFINITY } else { xi.at(t, l) })
                .collect()
        })
        .collect();
    Ok(SingularControl::from_rows(rows)?)
}

pub fn compare(problem: &Problem, limits: &EnumerationLimits, samples: usize) -> Result<EquivalenceInstance, RunError> {
    let Problem {
        tree, info, reward: k, ..
    } = problem;
    let bf = brute_force_optimal(tree, info, k, limits)?;
    let phi_dp = if info.is_filtration() {
        Some(snell_solve(tree, info, k)?.value)
    } else {
        None
    };
    let g = optimize_randomized(tree, info, k, limits)?;
    let xi = optimize_singular(tree, info, k, limits)?;
    let lambda_time_change = time_change_value(tree, k, &g.control)?;

    let mut rng = seeded_rng(problem.seed, 1);
    let mut best_sampled: Option<f64> = None;
    for _ in 0..samples {
        let rg = random_randomized_control::<f64, _>(&mut rng, info, true);
        let rxi = spend_at_horizon(&random_finite_xi::<f64, _>(&mut rng, info, 2.0))?;
        let v = randomized_value(tree, info, k, &rg)?.max(singular_value(tree, info, k, &rxi)?);
        best_sampled = Some(best_sampled.map_or(v, |b: f64| b.max(v)));
    }
    let path_max = (tree.num_leaves() == 1).then(|| k.values().iter().copied().fold(f64::NEG_INFINITY, f64::max));

    let mut inst = EquivalenceInstance {
        key: problem.key.clone(),
        num_leaves: tree.num_leaves(),
        num_periods: tree.num_periods(),
        filtration: info.is_filtration(),
        candidates: bf.num_candidates.unwrap_or(0),
        phi_brute_force: bf.value,
        phi_dp,
        lambda: g.value,
        psi: xi.value,
        lambda_time_change,
        best_sampled,
        path_max,
        optimal_tau: bf.optimal_tau.as_slice().to_vec(),
        gap_brute_force_dp: None,
        max_gap: 0.0,
    };
    let (bf_dp, gap) = inst.recompute();
    inst.gap_brute_force_dp = bf_dp;
    inst.max_gap = gap;
    Ok(inst)
}

pub fn run_equivalence(config: &ExperimentConfig) -> Result<EquivalenceResults, RunError> {
    let mut problems = fixtures(config.model.random.seed)?;
    problems.extend(random_problems(config)?);
    let limits = limits(config);
    let instances = problems
        .par_iter()
        .map(|p| compare(p, &limits, config.sweep.control_samples))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EquivalenceResults::from_instances(instances))
}
