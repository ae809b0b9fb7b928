//! First-order optimality diagnostics for singular controls.
//!
//! Given a candidate `xi`, this module computes the directional derivative of
//! `J`, the barrier pair
//!
//! - `Y(t) = E[sum_{s > t} k(s) dG(s) | H_t]` (remaining reward),
//! - `L(t) = E[k(t) e^{-xi(t)} | H_t]` (reward for acting now),
//!
//! and checks the variational inequalities `Y >= L` and
//! `(Y - L) dxi = 0`. All of it assumes nested information.
//!
//! On the grid the complementarity weight of step `t` is `1 - e^{-dxi(t)}`,
//! which is bounded and equals 1 for a jump to `+inf`.

use rand::Rng;
use serde::Serialize;

use crate::controls::{singular_objective, SingularControl};
use crate::error::{Error, Result};
use crate::info::InformationStructure;
use crate::process::{cell_average, check_adapted, AdaptedProcess};
use crate::scalar::{survival, Real};
use crate::stopping::{snell_solve, StoppingTime};
use crate::tree::ScenarioTree;

/// Tolerance on value-level residuals.
pub const VALUE_TOL: f64 = 1e-10;
/// Tolerance on derivative-level residuals.
pub const DERIVATIVE_TOL: f64 = 1e-8;

/// Finite signed direction `zeta` with a radius `r` such that `xi + y zeta`
/// stays admissible for `y in [0, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<T> {
    pub zeta: AdaptedProcess<T>,
    pub radius: T,
}

impl<T: Real> Perturbation<T> {
    pub fn new(zeta: AdaptedProcess<T>, radius: T) -> Result<Self> {
        if zeta.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Infeasible("zeta must be finite".into()));
        }
        if !(radius > T::zero()) {
            return Err(Error::Infeasible("radius must be positive".into()));
        }
        Ok(Self { zeta, radius })
    }

    pub fn zero(num_periods: usize, num_leaves: usize) -> Self {
        Self {
            zeta: AdaptedProcess::constant(num_periods, num_leaves, T::zero()),
            radius: T::one(),
        }
    }

    /// Direction `zeta = xi` (finite part; entries where `xi = +inf` repeat
    /// the last finite value). Feasible for every `y >= 0`.
    pub fn scaling(xi: &SingularControl<T>) -> Self {
        Self {
            zeta: finite_part(xi),
            radius: T::one(),
        }
    }

    /// `c * zeta` with the radius rescaled accordingly.
    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::new(self.zeta.map(|_, _, v| c * v), self.radius / c.abs())
    }

    /// `xi + y zeta`; `+inf` entries stay infinite.
    pub fn apply(&self, xi: &SingularControl<T>, y: T) -> Result<SingularControl<T>> {
        SingularControl::new(xi.values().map(|t, l, x| x + y * self.zeta.at(t, l)))
    }

    /// `zeta` adapted to `info`, and `xi + y zeta` admissible at `y = r` and
    /// `y = r / 2`.
    pub fn check_feasible(&self, xi: &SingularControl<T>, info: &InformationStructure) -> Result<()> {
        if self.zeta.num_periods() != xi.num_periods() || self.zeta.num_leaves() != xi.num_leaves() {
            return Err(Error::Shape("perturbation and control shapes differ".into()));
        }
        if let Some(v) = check_adapted(&self.zeta, info).violation {
            return Err(Error::Infeasible(format!(
                "zeta is not adapted at t={}, cell {}",
                v.t, v.cell
            )));
        }
        for y in [self.radius, self.radius / T::lit(2.0)] {
            self.apply(xi, y)
                .map_err(|e| Error::Infeasible(format!("xi + {y} zeta is not admissible: {e}")))?;
        }
        Ok(())
    }
}

fn finite_part<T: Real>(xi: &SingularControl<T>) -> AdaptedProcess<T> {
    let n = xi.num_periods();
    let leaves = xi.num_leaves();
    let mut rows = vec![vec![T::zero(); leaves]; n + 1];
    for leaf in 0..leaves {
        let mut last = T::zero();
        for (t, row) in rows.iter_mut().enumerate() {
            let x = xi.at(t, leaf);
            if x.is_finite() {
                last = x;
            }
            row[leaf] = last;
        }
    }
    AdaptedProcess::from_rows(rows).expect("shape preserved")
}

/// Random feasible direction `a W + b xi_finite` with `W` a nondecreasing,
/// nonnegative process adapted to `info`, `a in [0, 1]`, `b in [-1, 1]`.
/// The radius is `1/2`, which keeps `1 + y b > 0`.
pub fn random_perturbation<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    info: &InformationStructure,
    xi: &SingularControl<T>,
) -> Perturbation<T> {
    let w: SingularControl<T> = crate::controls::random_finite_xi(rng, info, 1.0);
    let a = T::lit(rng.gen::<f64>());
    let b = T::lit(rng.gen_range(-1.0..=1.0));
    let base = finite_part(xi);
    Perturbation {
        zeta: base.map(|t, l, x| a * w.at(t, l) + b * x),
        radius: T::lit(0.5),
    }
}

/// Exact derivative of `y -> J(xi + y zeta)` at `0+`:
/// `E[sum_t k(t) (e^{-xi(t)} dzeta(t) - zeta(t-1) dG(t))]`, `zeta(-1) = 0`.
pub fn gateaux_analytic<T: Real>(
    tree: &ScenarioTree<T>,
    k: &AdaptedProcess<T>,
    xi: &SingularControl<T>,
    zeta: &Perturbation<T>,
) -> Result<T> {
    k.check_shape(tree)?;
    xi.values().check_shape(tree)?;
    zeta.zeta.check_shape(tree)?;
    zeta.apply(xi, zeta.radius)
        .map_err(|e| Error::Infeasible(e.to_string()))?;
    let z = &zeta.zeta;
    let mut total = T::zero();
    for (leaf, &p) in tree.leaf_prob().iter().enumerate() {
        let mut acc = T::zero();
        let mut prev_z = T::zero();
        for t in 0..=tree.num_periods() {
            let zt = z.at(t, leaf);
            let keep = survival(xi.at(t, leaf));
            acc = acc + k.at(t, leaf) * (keep * (zt - prev_z) - prev_z * xi.mass(t, leaf));
            prev_z = zt;
        }
        total = total + p * acc;
    }
    Ok(total)
}

/// `(J(xi + y zeta) - J(xi)) / y` for `0 < y <= radius`.
pub fn gateaux_fd<T: Real>(
    tree: &ScenarioTree<T>,
    k: &AdaptedProcess<T>,
    xi: &SingularControl<T>,
    zeta: &Perturbation<T>,
    y: T,
) -> Result<T> {
    if !(y > T::zero() && y <= zeta.radius) {
        return Err(Error::Infeasible(format!("step {y} outside (0, {}]", zeta.radius)));
    }
    let moved = zeta.apply(xi, y).map_err(|e| Error::Infeasible(e.to_string()))?;
    Ok((singular_objective(tree, k, &moved)? - singular_objective(tree, k, xi)?) / y)
}

/// Finite-difference errors against the analytic derivative at a ladder of
/// steps, with the linear error constant estimated from the two largest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RichardsonCheck {
    pub analytic: f64,
    pub steps: Vec<f64>,
    pub fd: Vec<f64>,
    pub errors: Vec<f64>,
    /// Slope of the finite differences in `y`.
    pub constant: f64,
    pub passes: bool,
}

/// Requires `|fd(y) - D| <= (2|c| + 1e-6) y + 1e-9 max(1, |J|)` at every
/// step, where `c` is the slope between the two largest steps.
pub fn richardson_check<T: Real>(
    tree: &ScenarioTree<T>,
    k: &AdaptedProcess<T>,
    xi: &SingularControl<T>,
    zeta: &Perturbation<T>,
    steps: &[f64],
) -> Result<RichardsonCheck> {
    if steps.len() < 2 {
        return Err(Error::InvalidParam("need at least two steps".into()));
    }
    let analytic = gateaux_analytic(tree, k, xi, zeta)?.as_f64();
    let fd = steps
        .iter()
        .map(|&y| gateaux_fd(tree, k, xi, zeta, T::lit(y)).map(Real::as_f64))
        .collect::<Result<Vec<_>>>()?;
    let constant = (fd[0] - fd[1]) / (steps[0] - steps[1]);
    let scale = singular_objective(tree, k, xi)?.as_f64().abs().max(1.0);
    let errors: Vec<f64> = fd.iter().map(|f| (f - analytic).abs()).collect();
    let passes = errors
        .iter()
        .zip(steps)
        .all(|(e, y)| *e <= (2.0 * constant.abs() + 1e-6) * y + 1e-9 * scale);
    Ok(RichardsonCheck {
        analytic,
        steps: steps.to_vec(),
        fd,
        errors,
        constant,
        passes,
    })
}

/// `H_t` is contained in `F_t` at every `t`.
pub fn is_partial_information<T: Real>(tree: &ScenarioTree<T>, info: &InformationStructure) -> bool {
    info.is_coarser_than(&tree.filtration())
}

/// The barrier pair `(Y, L)` for a candidate `xi`.
pub fn compute_y_l<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    xi: &SingularControl<T>,
) -> Result<(AdaptedProcess<T>, AdaptedProcess<T>)> {
    k.check_shape(tree)?;
    xi.values().check_shape(tree)?;
    if !info.is_filtration() {
        return Err(Error::NotFiltration("compute_y_l"));
    }
    let n = tree.num_periods();
    let leaves = tree.num_leaves();
    let mut tail = vec![T::zero(); leaves];
    let mut y_rows = vec![Vec::new(); n + 1];
    let mut l_rows = vec![Vec::new(); n + 1];
    for t in (0..=n).rev() {
        y_rows[t] = cell_average(tree, &tail, info.at(t), t)?;
        let now: Vec<T> = (0..leaves).map(|l| k.at(t, l) * survival(xi.at(t, l))).collect();
        l_rows[t] = cell_average(tree, &now, info.at(t), t)?;
        for (l, acc) in tail.iter_mut().enumerate() {
            *acc = *acc + k.at(t, l) * xi.mass(t, l);
        }
    }
    Ok((AdaptedProcess::from_rows(y_rows)?, AdaptedProcess::from_rows(l_rows)?))
}

/// Outcome of the variational-inequality check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViReport {
    /// `xi(N) = +inf` everywhere; the inequalities are necessary only then.
    pub strict: bool,
    /// `H_t` is contained in `F_t`; the barrier reading assumes it.
    pub partial_information: bool,
    pub min_gap: f64,
    /// `(t, cell)` of the smallest `Y - L`.
    pub min_gap_at: (usize, usize),
    /// `E[sum_t |Y(t) - L(t)| (1 - e^{-dxi(t)})]`.
    pub slackness: f64,
    pub sup_discounted_reward: f64,
    pub control_value: f64,
    pub passes_min_gap: bool,
    pub passes_slackness: bool,
    pub passes: bool,
}

/// `1 - e^{-(xi(t) - xi(t-1))}`, with 1 for a jump to `+inf` and 0 once
/// `xi` is already infinite.
fn step_weight<T: Real>(xi: &SingularControl<T>, t: usize, leaf: usize) -> T {
    let before = xi.before(t, leaf);
    let now = xi.at(t, leaf);
    if before == T::infinity() {
        T::zero()
    } else if now == T::infinity() {
        T::one()
    } else {
        T::one() - (before - now).exp()
    }
}

pub fn vi_check<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    xi: &SingularControl<T>,
) -> Result<ViReport> {
    xi.check_adapted(info)?;
    let (y, l) = compute_y_l(tree, info, k, xi)?;
    let mut min_gap = f64::INFINITY;
    let mut min_gap_at = (0, 0);
    let mut slackness = T::zero();
    for t in 0..=tree.num_periods() {
        for (c, cell) in info.at(t).cells().iter().enumerate() {
            let gap = (y.at(t, cell[0]) - l.at(t, cell[0])).as_f64();
            if gap < min_gap {
                min_gap = gap;
                min_gap_at = (t, c);
            }
        }
        for (leaf, &p) in tree.leaf_prob().iter().enumerate() {
            let gap = (y.at(t, leaf) - l.at(t, leaf)).abs();
            slackness = slackness + p * gap * step_weight(xi, t, leaf);
        }
    }
    let identity = stopping_identity_check(tree, info, k, xi)?;
    let slackness = slackness.as_f64();
    let passes_min_gap = min_gap >= -VALUE_TOL;
    let passes_slackness = slackness <= VALUE_TOL;
    Ok(ViReport {
        strict: xi.is_strict(),
        partial_information: is_partial_information(tree, info),
        min_gap,
        min_gap_at,
        slackness,
        sup_discounted_reward: identity.lhs,
        control_value: identity.rhs,
        passes_min_gap,
        passes_slackness,
        passes: passes_min_gap && passes_slackness,
    })
}

/// Both sides of `sup_tau E[e^{-xi(tau-)} k(tau)] = J(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingIdentityReport {
    /// Supremum with the discount taken just before `tau` (`xi(-1) = 0`).
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Supremum with the discount `e^{-xi(tau)}`.
    pub lhs_right_value: f64,
    pub gap_right_value: f64,
    /// `E[k(t) | H_t] >= 0` wherever `xi` spends mass. The identity needs
    /// it: past the jump the discounted payoff is 0, which beats a negative
    /// reward.
    pub nonnegative_on_support: bool,
    pub lhs_tau: StoppingTime,
}

pub fn stopping_identity_check<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    xi: &SingularControl<T>,
) -> Result<StoppingIdentityReport> {
    let left = k.map(|t, l, v| v * survival(xi.before(t, l)));
    let right = k.map(|t, l, v| v * survival(xi.at(t, l)));
    let sol = snell_solve(tree, info, &left)?;
    let right_value = snell_solve(tree, info, &right)?.value.as_f64();
    let rhs = singular_objective(tree, k, xi)?.as_f64();
    let kt = crate::process::condition_process(tree, k, info)?;
    let nonnegative_on_support = (0..=tree.num_periods())
        .all(|t| (0..tree.num_leaves()).all(|l| !(xi.mass(t, l) > T::zero()) || kt.at(t, l) >= T::zero()));
    let lhs = sol.value.as_f64();
    Ok(StoppingIdentityReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        lhs_right_value: right_value,
        gap_right_value: (right_value - rhs).abs(),
        nonnegative_on_support,
        lhs_tau: sol.optimal_tau,
    })
}

/// `xi(tau - 1) = 0` on every leaf, with `xi(-1) = 0`.
pub fn no_mass_before_stop<T: Real>(xi: &SingularControl<T>, tau: &StoppingTime) -> bool {
    (0..tau.num_leaves()).all(|l| xi.before(tau.at(l), l).abs() <= T::validation_tol())
}

/// The double sum `sum_t dxi(t) sum_{s >= t} w(s)` and its collapsed form
/// `sum_s xi(s) w(s)`, with `w(s) = k(s) (e^{-xi(s-1)} - e^{-xi(s)})`, in
/// expectation. Only finite `xi` makes sense here.
pub fn fubini_forms<T: Real>(tree: &ScenarioTree<T>, k: &AdaptedProcess<T>, xi: &SingularControl<T>) -> Result<(T, T)> {
    k.check_shape(tree)?;
    if xi.values().values().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParam("fubini_forms needs a finite control".into()));
    }
    let n = tree.num_periods();
    let (mut nested, mut collapsed) = (T::zero(), T::zero());
    for (leaf, &p) in tree.leaf_prob().iter().enumerate() {
        let w: Vec<T> = (0..=n).map(|s| k.at(s, leaf) * xi.mass(s, leaf)).collect();
        let mut outer = T::zero();
        for t in 0..=n {
            let inner: T = w[t..].iter().copied().sum();
            outer = outer + (xi.at(t, leaf) - xi.before(t, leaf)) * inner;
        }
        let flat: T = (0..=n).map(|s| xi.at(s, leaf) * w[s]).sum();
        nested = nested + p * outer;
        collapsed = collapsed + p * flat;
    }
    Ok((nested, collapsed))
}
