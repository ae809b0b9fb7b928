//! First-order optimality audit of singular controls.
//!
//! Every instance is solved, a candidate control is chosen (the optimizer's
//! output unless the config asks for a probe), and the candidate is checked
//! against: the value `Phi` from exhaustive search, the barrier inequalities
//! `Y >= L` with complementary slackness, the discounted-stopping identity,
//! `xi(tau* - 1) = 0`, and a vanishing directional derivative into feasible
//! directions. Independently, the exact directional derivative is compared
//! with finite differences at a random finite control.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stopflow::controls::random_finite_xi;
use stopflow::model::{gbm_lattice_with_cap, t2};
use stopflow::stopping::count_stopping_times;
use stopflow::vi::{
    gateaux_analytic, no_mass_before_stop, random_perturbation, richardson_check, stopping_identity_check,
    DERIVATIVE_TOL, VALUE_TOL,
};
use stopflow::{
    brute_force_optimal, lagged_information, optimize_singular, singular_value, vi_check, AdaptedProcess, LagSpec,
    SingularControl, StoppingTime,
};

use crate::config::Candidate;
use crate::equivalence::{limits, random_problems, Problem};
use crate::record::{num, opt_num, same};
use crate::{seeded_rng, ExperimentConfig, RunError};

pub const NOT_STRICT_NOTE: &str = "not strict-class; VI necessary-condition skipped";
pub const NEGATIVE_REWARD_NOTE: &str =
    "discounted-stopping identity skipped: conditioned reward is negative where the control spends mass";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViSummary {
    pub min_gap: f64,
    /// `(t, cell)` of the smallest `Y - L`.
    pub min_gap_at: (usize, usize),
    pub slackness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingIdentity {
    /// `sup_tau E[e^{-xi(tau - 1)} k(tau)]`.
    pub lhs: f64,
    /// `J(xi)`.
    pub rhs: f64,
    pub gap: f64,
    /// The same supremum discounted by `e^{-xi(tau)}`.
    pub lhs_right_value: f64,
    pub nonnegative_on_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteDifferenceBattery {
    pub perturbations: usize,
    pub passed: usize,
    /// Largest `|fd(y) - D| / y` over steps and perturbations.
    pub max_error_ratio: f64,
    pub max_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditInstance {
    pub key: String,
    pub num_leaves: usize,
    pub num_periods: usize,
    /// `H_t` inside `F_t` at every `t`.
    pub partial_information: bool,
    pub candidate_strict: bool,
    /// Value by backward induction.
    pub phi: f64,
    pub phi_brute_force: Option<f64>,
    /// `J` of the candidate.
    pub value: f64,
    /// `|value - Phi|`, with `Phi` from exhaustive search when available.
    pub value_gap: Option<f64>,
    pub vi: Option<ViSummary>,
    pub identity: Option<StoppingIdentity>,
    /// `xi(tau* - 1) = 0` on every leaf.
    pub no_mass_before_stop: Option<bool>,
    /// Largest directional derivative at the candidate over the sampled
    /// feasible directions.
    pub max_derivative: Option<f64>,
    pub finite_differences: FiniteDifferenceBattery,
    pub notes: Vec<String>,
}

impl AuditInstance {
    /// `(criterion, detail)` for each failed check.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(g) = self.value_gap {
            if g > VALUE_TOL {
                out.push(("value_gap", format!("|J - Phi| = {g:e} > {VALUE_TOL:e}")));
            }
        }
        if let Some(vi) = &self.vi {
            if vi.min_gap < -VALUE_TOL {
                out.push((
                    "min_gap",
                    format!("Y - L = {:e} at (t, cell) = {:?}", vi.min_gap, vi.min_gap_at),
                ));
            }
            if vi.slackness > VALUE_TOL {
                out.push((
                    "slackness",
                    format!("E[sum |Y - L| dG] = {:e} > {VALUE_TOL:e}", vi.slackness),
                ));
            }
        }
        if let Some(id) = &self.identity {
            if id.nonnegative_on_support && id.gap > VALUE_TOL {
                out.push(("stopping_identity", format!("gap {:e} > {VALUE_TOL:e}", id.gap)));
            }
        }
        if self.no_mass_before_stop == Some(false) {
            out.push(("no_mass_before_stop", "xi(tau* - 1) > 0 on some leaf".into()));
        }
        if let Some(d) = self.max_derivative {
            if d > DERIVATIVE_TOL {
                out.push((
                    "derivative",
                    format!("directional derivative {d:e} > {DERIVATIVE_TOL:e}"),
                ));
            }
        }
        let fd = &self.finite_differences;
        if fd.passed < fd.perturbations {
            out.push((
                "finite_differences",
                format!(
                    "{} of {} perturbations off the linear error bound",
                    fd.perturbations - fd.passed,
                    fd.perturbations
                ),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViAuditResults {
    pub candidate: Candidate,
    pub instances: Vec<AuditInstance>,
}

impl ViAuditResults {
    pub fn failures(&self) -> Vec<String> {
        self.instances
            .iter()
            .flat_map(|i| {
                i.violations()
                    .into_iter()
                    .map(move |(name, detail)| format!("{}: criterion `{name}` violated: {detail}", i.key))
            })
            .collect()
    }

    pub fn check_integrity(&self) -> Result<(), String> {
        for i in &self.instances {
            if let Some(g) = i.value_gap {
                let reference = i.phi_brute_force.unwrap_or(i.phi);
                same(g, (i.value - reference).abs(), &format!("{} value gap", i.key))?;
            }
            if let Some(id) = &i.identity {
                same(id.gap, (id.lhs - id.rhs).abs(), &format!("{} identity gap", i.key))?;
            }
            if i.finite_differences.passed > i.finite_differences.perturbations {
                return Err(format!("{}: more passes than perturbations", i.key));
            }
        }
        if self.instances.windows(2).any(|w| w[0].key >= w[1].key) {
            return Err("instances are not sorted by key".into());
        }
        Ok(())
    }

    pub fn csv_header(&self) -> Vec<String> {
        [
            "key",
            "phi",
            "value",
            "value_gap",
            "min_gap",
            "slackness",
            "identity_gap",
            "max_derivative",
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
                    num(i.phi),
                    num(i.value),
                    opt_num(i.value_gap),
                    opt_num(i.vi.as_ref().map(|v| v.min_gap)),
                    opt_num(i.vi.as_ref().map(|v| v.slackness)),
                    opt_num(i.identity.as_ref().map(|v| v.gap)),
                    opt_num(i.max_derivative),
                ]
            })
            .collect()
    }
}

/// Half the mass at time 0, the rest at `tau`: `xi = ln 2` before `tau`,
/// `+inf` from `tau` on.
pub fn half_early_control(tau: &StoppingTime, num_periods: usize) -> Result<SingularControl<f64>, RunError> {
    let xi = AdaptedProcess::from_fn(num_periods, tau.num_leaves(), |t, l| {
        if t >= tau.at(l) {
            f64::INFINITY
        } else {
            std::f64::consts::LN_2
        }
    });
    Ok(SingularControl::new(xi)?)
}

fn audit_problems(config: &ExperimentConfig) -> Result<Vec<Problem>, RunError> {
    let seed = config.model.random.seed;
    let fx = t2::<f64>();
    let lat = gbm_lattice_with_cap(&config.gbm(), config.caps.max_gbm_shocks)?;
    let mut problems = vec![
        Problem {
            key: "gbm".into(),
            info: lagged_information(&lat.tree, config.lag())?,
            tree: lat.tree,
            reward: lat.reward,
            seed: seed.wrapping_add(3),
        },
        Problem {
            key: "t2-delay-1".into(),
            info: lagged_information(&fx.tree, LagSpec::delayed(1))?,
            tree: fx.tree.clone(),
            reward: fx.reward.clone(),
            seed: seed.wrapping_add(1),
        },
        Problem {
            key: "t2-full".into(),
            info: fx.tree.filtration(),
            tree: fx.tree,
            reward: fx.reward,
            seed,
        },
    ];
    let shift = config.sweep.reward_shift;
    for mut p in random_problems(config)? {
        p.reward = p.reward.map(|_, _, v| v + shift);
        problems.push(p);
    }
    Ok(problems)
}

pub fn audit(problem: &Problem, config: &ExperimentConfig) -> Result<AuditInstance, RunError> {
    let Problem {
        tree, info, reward: k, ..
    } = problem;
    let limits = limits(config);
    let opt = optimize_singular(tree, info, k, &limits)?;
    let tau = &opt.stopping.optimal_tau;
    let enumerable = tree.num_leaves() <= limits.max_leaves
        && tree.num_periods() <= limits.max_periods
        && count_stopping_times(info).0 <= limits.max_count;
    let phi_brute_force = if enumerable {
        Some(brute_force_optimal(tree, info, k, &limits)?.value)
    } else {
        None
    };
    let candidate = match config.sweep.candidate {
        Candidate::Optimal => opt.control.clone(),
        Candidate::Suboptimal => half_early_control(tau, tree.num_periods())?,
        Candidate::Idle => SingularControl::new(AdaptedProcess::constant(tree.num_periods(), tree.num_leaves(), 0.0))?,
    };
    let value = singular_value(tree, info, k, &candidate)?;
    let mut notes = Vec::new();
    let mut rng = seeded_rng(problem.seed, 2);

    let strict = candidate.is_strict();
    let (value_gap, vi, identity, no_mass_before_stop, max_derivative) = if strict {
        let reference = phi_brute_force.unwrap_or(opt.stopping.value);
        let report = vi_check(tree, info, k, &candidate)?;
        let id = stopping_identity_check(tree, info, k, &candidate)?;
        if !id.nonnegative_on_support {
            notes.push(NEGATIVE_REWARD_NOTE.to_string());
        }
        let mut max_d = f64::NEG_INFINITY;
        for _ in 0..config.sweep.perturbations {
            let zeta = random_perturbation(&mut rng, info, &candidate);
            zeta.check_feasible(&candidate, info)?;
            max_d = max_d.max(gateaux_analytic(tree, k, &candidate, &zeta)?);
        }
        (
            Some((value - reference).abs()),
            Some(ViSummary {
                min_gap: report.min_gap,
                min_gap_at: report.min_gap_at,
                slackness: report.slackness,
            }),
            Some(StoppingIdentity {
                lhs: id.lhs,
                rhs: id.rhs,
                gap: (id.lhs - id.rhs).abs(),
                lhs_right_value: id.lhs_right_value,
                nonnegative_on_support: id.nonnegative_on_support,
            }),
            Some(no_mass_before_stop(&candidate, tau)),
            Some(max_d),
        )
    } else {
        notes.push(NOT_STRICT_NOTE.to_string());
        (None, None, None, None, None)
    };

    let finite = random_finite_xi::<f64, _>(&mut rng, info, 1.0);
    let mut battery = FiniteDifferenceBattery {
        perturbations: config.sweep.perturbations,
        passed: 0,
        max_error_ratio: 0.0,
        max_constant: 0.0,
    };
    for _ in 0..config.sweep.perturbations {
        let zeta = random_perturbation(&mut rng, info, &finite);
        zeta.check_feasible(&finite, info)?;
        let check = richardson_check(tree, k, &finite, &zeta, &config.sweep.fd_steps)?;
        if check.passes {
            battery.passed += 1;
        }
        for (e, y) in check.errors.iter().zip(&check.steps) {
            battery.max_error_ratio = battery.max_error_ratio.max(e / y);
        }
        battery.max_constant = battery.max_constant.max(check.constant.abs());
    }

    Ok(AuditInstance {
        key: problem.key.clone(),
        num_leaves: tree.num_leaves(),
        num_periods: tree.num_periods(),
        partial_information: stopflow::vi::is_partial_information(tree, info),
        candidate_strict: strict,
        phi: opt.stopping.value,
        phi_brute_force,
        value,
        value_gap,
        vi,
        identity,
        no_mass_before_stop,
        max_derivative,
        finite_differences: battery,
        notes,
    })
}

pub fn run_vi_audit(config: &ExperimentConfig) -> Result<ViAuditResults, RunError> {
    let problems = audit_problems(config)?;
    let mut instances = problems
        .par_iter()
        .map(|p| audit(p, config))
        .collect::<Result<Vec<_>, _>>()?;
    instances.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(ViAuditResults {
        candidate: config.sweep.candidate,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ExperimentKind;

    fn small(candidate: Candidate) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::ViAudit);
        cfg.sweep.instances = 4;
        cfg.sweep.perturbations = 8;
        cfg.sweep.candidate = candidate;
        cfg
    }

    #[test]
    fn optimal_candidates_pass() {
        let res = run_vi_audit(&small(Candidate::Optimal)).unwrap();
        assert!(res.failures().is_empty(), "{:?}", res.failures());
        res.check_integrity().unwrap();
        assert_eq!(res.instances.len(), 7);
        for i in &res.instances {
            assert!(i.candidate_strict);
            assert!(i.partial_information);
            assert_eq!(i.no_mass_before_stop, Some(true));
        }
    }

    #[test]
    fn suboptimal_candidate_is_caught_by_name() {
        let res = run_vi_audit(&small(Candidate::Suboptimal)).unwrap();
        let failures = res.failures();
        let t2 = res.instances.iter().find(|i| i.key == "t2-delay-1").unwrap();
        let names: Vec<_> = t2.violations().into_iter().map(|v| v.0).collect();
        assert!(names.contains(&"value_gap"), "{names:?}");
        assert!(names.contains(&"slackness"), "{names:?}");
        assert!(failures.iter().any(|f| f.contains("t2-delay-1: criterion `slackness`")));
    }

    #[test]
    fn idle_control_is_skipped_with_a_note() {
        let res = run_vi_audit(&small(Candidate::Idle)).unwrap();
        for i in &res.instances {
            assert!(!i.candidate_strict);
            assert!(i.notes.iter().any(|n| n == NOT_STRICT_NOTE));
            assert!(i.vi.is_none() && i.value_gap.is_none());
            assert_eq!(i.value, 0.0);
        }
        assert!(res.failures().is_empty(), "{:?}", res.failures());
    }

    #[test]
    fn half_early_control_on_t2() {
        let fx = t2::<f64>();
        let tau = StoppingTime::constant(4, 2);
        let xi = half_early_control(&tau, 2).unwrap();
        let info = fx.tree.filtration();
        let v = singular_value(&fx.tree, &info, &fx.reward, &xi).unwrap();
        // half of k(0) = 0 plus half of E[k(2)] = 1.25
        assert!((v - 0.625).abs() < 1e-15);
    }
}
