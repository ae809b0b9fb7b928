//! Randomized stopping controls `G` and singular controls `xi`, their value
//! functionals, and the maps between them and stopping times.
//!
//! Stieltjes integrals over one grid step use the exact-exponential rule: a
//! singular control spends mass `e^{-xi(t-1)} - e^{-xi(t)}` at step `t`, with
//! `xi(-1) = 0`. Under this rule `G = 1 - e^{-xi}` is an exact bijection, so
//! values carried across the maps agree up to rounding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::InformationStructure;
use crate::process::{check_adapted, AdaptedProcess};
use crate::scalar::{survival, Real};
use crate::stopping::{expected_reward, solve, EnumerationLimits, StoppingSolution, StoppingTime};
use crate::tree::ScenarioTree;

/// Strict controls spend total mass exactly 1; extended ones at most 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlClass {
    Strict,
    Extended,
}

fn require_adapted<T: Real>(p: &AdaptedProcess<T>, info: &InformationStructure) -> Result<()> {
    match check_adapted(p, info).violation {
        Some(v) => Err(Error::NotAdapted { t: v.t, cell: v.cell }),
        None => Ok(()),
    }
}

/// Nondecreasing `G(t) in [0, 1]` per leaf, with `G(-1) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedControl<T> {
    g: AdaptedProcess<T>,
    class: ControlClass,
}

impl<T: Real> RandomizedControl<T> {
    /// Validates range and monotonicity; the class is strict iff `G(N) = 1`
    /// on every leaf (within the validation tolerance).
    pub fn new(g: AdaptedProcess<T>) -> Result<Self> {
        let tol = T::validation_tol();
        let n = g.num_periods();
        for leaf in 0..g.num_leaves() {
            let mut prev = T::zero();
            for t in 0..=n {
                let v = g.at(t, leaf);
                if v.is_nan() || v < -tol || v > T::one() + tol {
                    return Err(Error::Inadmissible(format!(
                        "G({t}) = {v} on leaf {leaf} is outside [0, 1]"
                    )));
                }
                if v < prev - tol {
                    return Err(Error::Inadmissible(format!("G decreases at t={t} on leaf {leaf}")));
                }
                prev = v;
            }
        }
        let strict = g.slice(n).iter().all(|&v| (v - T::one()).abs() <= tol);
        let class = if strict {
            ControlClass::Strict
        } else {
            ControlClass::Extended
        };
        Ok(Self { g, class })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::new(AdaptedProcess::from_rows(rows)?)
    }

    pub fn values(&self) -> &AdaptedProcess<T> {
        &self.g
    }

    pub fn class(&self) -> ControlClass {
        self.class
    }

    pub fn is_strict(&self) -> bool {
        self.class == ControlClass::Strict
    }

    pub fn num_periods(&self) -> usize {
        self.g.num_periods()
    }

    pub fn num_leaves(&self) -> usize {
        self.g.num_leaves()
    }

    #[inline]
    pub fn at(&self, t: usize, leaf: usize) -> T {
        self.g.at(t, leaf)
    }

    /// `G(t) - G(t - 1)`.
    #[inline]
    pub fn increment(&self, t: usize, leaf: usize) -> T {
        if t == 0 {
            self.g.at(0, leaf)
        } else {
            self.g.at(t, leaf) - self.g.at(t - 1, leaf)
        }
    }

    pub fn check_adapted(&self, info: &InformationStructure) -> Result<()> {
        require_adapted(&self.g, info)
    }

    /// `m * G`, an extended-class control for `m < 1`.
    pub fn scaled(&self, m: T) -> Result<Self> {
        Self::new(self.g.map(|_, _, v| m * v))
    }
}

/// Nondecreasing `xi(t) in [0, +inf]` per leaf, with `xi(-1) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularControl<T> {
    xi: AdaptedProcess<T>,
    class: ControlClass,
}

impl<T: Real> SingularControl<T> {
    /// Validates sign and monotonicity; the class is strict iff `xi(N) = +inf`
    /// on every leaf.
    pub fn new(xi: AdaptedProcess<T>) -> Result<Self> {
        let tol = T::validation_tol();
        let n = xi.num_periods();
        for leaf in 0..xi.num_leaves() {
            let mut prev = T::zero();
            for t in 0..=n {
                let v = xi.at(t, leaf);
                if v.is_nan() || v < -tol {
                    return Err(Error::Inadmissible(format!("xi({t}) = {v} on leaf {leaf} is negative")));
                }
                if v < prev - tol * T::one().max(prev.abs()) {
                    return Err(Error::Inadmissible(format!("xi decreases at t={t} on leaf {leaf}")));
                }
                prev = v;
            }
        }
        let strict = xi.slice(n).iter().all(|&v| v == T::infinity());
        let class = if strict {
            ControlClass::Strict
        } else {
            ControlClass::Extended
        };
        Ok(Self { xi, class })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::new(AdaptedProcess::from_rows(rows)?)
    }

    pub fn values(&self) -> &AdaptedProcess<T> {
        &self.xi
    }

    pub fn class(&self) -> ControlClass {
        self.class
    }

    pub fn is_strict(&self) -> bool {
        self.class == ControlClass::Strict
    }

    pub fn num_periods(&self) -> usize {
        self.xi.num_periods()
    }

    pub fn num_leaves(&self) -> usize {
        self.xi.num_leaves()
    }

    #[inline]
    pub fn at(&self, t: usize, leaf: usize) -> T {
        self.xi.at(t, leaf)
    }

    /// `xi(t - 1)` with `xi(-1) = 0`.
    #[inline]
    pub fn before(&self, t: usize, leaf: usize) -> T {
        if t == 0 {
            T::zero()
        } else {
            self.xi.at(t - 1, leaf)
        }
    }

    /// Mass spent at step `t`: `e^{-xi(t-1)} - e^{-xi(t)}`.
    #[inline]
    pub fn mass(&self, t: usize, leaf: usize) -> T {
        survival(self.before(t, leaf)) - survival(self.at(t, leaf))
    }

    pub fn check_adapted(&self, info: &InformationStructure) -> Result<()> {
        require_adapted(&self.xi, info)
    }
}

fn check_control_shape<T: Real>(tree: &ScenarioTree<T>, k: &AdaptedProcess<T>, c: &AdaptedProcess<T>) -> Result<()> {
    k.check_shape(tree)?;
    c.check_shape(tree)
}

/// `E[sum_t k(t) dG(t)]` without an adaptedness check.
pub fn stieltjes_value<T: Real>(tree: &ScenarioTree<T>, k: &AdaptedProcess<T>, g: &RandomizedControl<T>) -> Result<T> {
    check_control_shape(tree, k, &g.g)?;
    Ok(tree
        .leaf_prob()
        .iter()
        .enumerate()
        .map(|(leaf, &p)| {
            p * (0..=tree.num_periods())
                .map(|t| k.at(t, leaf) * g.increment(t, leaf))
                .sum::<T>()
        })
        .sum())
}

/// `E[sum_t k(t) dG(t)]` for a `G` adapted to `info`.
pub fn randomized_value<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    g: &RandomizedControl<T>,
) -> Result<T> {
    g.check_adapted(info)?;
    stieltjes_value(tree, k, g)
}

/// `J(xi) = E[sum_t k(t) (e^{-xi(t-1)} - e^{-xi(t)})]` without an
/// adaptedness check.
pub fn singular_objective<T: Real>(
    tree: &ScenarioTree<T>,
    k: &AdaptedProcess<T>,
    xi: &SingularControl<T>,
) -> Result<T> {
    check_control_shape(tree, k, &xi.xi)?;
    Ok(tree
        .leaf_prob()
        .iter()
        .enumerate()
        .map(|(leaf, &p)| {
            p * (0..=tree.num_periods())
                .map(|t| k.at(t, leaf) * xi.mass(t, leaf))
                .sum::<T>()
        })
        .sum())
}

/// `J(xi)` for a `xi` adapted to `info`.
pub fn singular_value<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    xi: &SingularControl<T>,
) -> Result<T> {
    xi.check_adapted(info)?;
    singular_objective(tree, k, xi)
}

/// Unit jump at `tau`: `G(t) = 1{t >= tau}`.
pub fn g_from_tau<T: Real>(tau: &StoppingTime, num_periods: usize) -> RandomizedControl<T> {
    let g = AdaptedProcess::from_fn(num_periods, tau.num_leaves(), |t, leaf| {
        if t >= tau.at(leaf) {
            T::one()
        } else {
            T::zero()
        }
    });
    RandomizedControl {
        g,
        class: ControlClass::Strict,
    }
}

/// `xi = 0` before `tau` and `+inf` from `tau` on.
pub fn xi_from_tau<T: Real>(tau: &StoppingTime, num_periods: usize) -> SingularControl<T> {
    xi_from_g(&g_from_tau(tau, num_periods))
}

/// First `t` with `G(t) >= r` per leaf, `None` where `G` never gets there.
fn first_passage<T: Real>(g: &RandomizedControl<T>, r: T) -> Vec<Option<usize>> {
    (0..g.num_leaves())
        .map(|leaf| (0..=g.num_periods()).find(|&t| g.at(t, leaf) >= r))
        .collect()
}

/// Time change `alpha(r) = min{t : G(t) >= r}` for `r in [0, 1)` and a strict
/// `G`. Adaptedness of `G` makes the result a stopping time for the same
/// information.
pub fn tau_from_g<T: Real>(g: &RandomizedControl<T>, r: T) -> Result<StoppingTime> {
    if !g.is_strict() {
        return Err(Error::Inadmissible("tau_from_g needs a strict-class control".into()));
    }
    if !(r >= T::zero() && r < T::one()) {
        return Err(Error::InvalidParam(format!("level r = {r} must lie in [0, 1)")));
    }
    let n = g.num_periods();
    // G(N) may sit a rounding error below 1
    Ok(StoppingTime::new(
        first_passage(g, r).into_iter().map(|t| t.unwrap_or(n)).collect(),
    ))
}

/// `G = 1 - e^{-xi}`; keeps the class.
pub fn g_from_xi<T: Real>(xi: &SingularControl<T>) -> RandomizedControl<T> {
    RandomizedControl {
        g: xi.xi.map(|_, _, x| T::one() - survival(x)),
        class: xi.class,
    }
}

/// `xi = -ln(1 - G)`, `+inf` where `G = 1`. A strict `G` maps to `xi(N) = +inf`.
pub fn xi_from_g<T: Real>(g: &RandomizedControl<T>) -> SingularControl<T> {
    let n = g.num_periods();
    let strict = g.is_strict();
    let xi = g.g.map(|t, _, v| {
        if v >= T::one() || (strict && t == n) {
            T::infinity()
        } else {
            T::zero() - (T::one() - v.max(T::zero())).ln()
        }
    });
    SingularControl { xi, class: g.class }
}

/// `G_n(t) = 1{t >= tau > 0} + (1 - e^{-n t h}) 1{tau = 0}` with `G_n(N) = 1`.
pub fn approx_g_n<T: Real>(tree: &ScenarioTree<T>, tau: &StoppingTime, n: u32) -> Result<RandomizedControl<T>> {
    if n == 0 {
        return Err(Error::InvalidParam("n must be >= 1".into()));
    }
    let big_n = tree.num_periods();
    let rate = T::lit(n as f64);
    let g = AdaptedProcess::from_fn(big_n, tau.num_leaves(), |t, leaf| {
        if tau.at(leaf) > 0 {
            if t >= tau.at(leaf) {
                T::one()
            } else {
                T::zero()
            }
        } else if t == big_n {
            T::one()
        } else {
            T::one() - (-rate * tree.time_at(t)).exp()
        }
    });
    Ok(RandomizedControl {
        g,
        class: ControlClass::Strict,
    })
}

/// Bound on `|E[sum k dG_n] - E[k(tau)]|`:
/// `E[1{tau = 0} (|k(1) - k(0)| + max_t |k(t) - k(0)| e^{-n h})]`.
///
/// On a grid the mass of `G_n` sits at `t >= 1`, so the gap only closes when
/// `k` is continuous at 0.
pub fn approx_g_n_bound<T: Real>(
    tree: &ScenarioTree<T>,
    k: &AdaptedProcess<T>,
    tau: &StoppingTime,
    n: u32,
) -> Result<T> {
    k.check_shape(tree)?;
    let tail = (-T::lit(n as f64) * tree.step()).exp();
    Ok(tree
        .leaf_prob()
        .iter()
        .enumerate()
        .filter(|&(leaf, _)| tau.at(leaf) == 0)
        .map(|(leaf, &p)| {
            let k0 = k.at(0, leaf);
            let jump = (k.at(1, leaf) - k0).abs();
            let osc = (0..=tree.num_periods())
                .map(|t| (k.at(t, leaf) - k0).abs())
                .fold(T::zero(), T::max);
            p * (jump + osc * tail)
        })
        .sum())
}

/// Absolutely continuous approximation of the jump at `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiApproximation<T> {
    pub xi: SingularControl<T>,
    pub n: u32,
    /// `1/sqrt(n)` rounded up to whole grid steps.
    pub lead_steps: usize,
    /// The grid step exceeds `1/sqrt(n)`, so the lead is coarser than asked.
    pub coarse_grid: bool,
}

/// Push rate `n` switched on `lead_steps` steps before `tau` (at time 0 if
/// that is earlier): `xi(t) = n h (t - max(tau - lead_steps, 0))^+`.
///
/// The result is an extended-class control, since finite `xi` never spends
/// full mass. It anticipates `tau`, so it is generally not adapted to the
/// information `tau` was built for; evaluate it with [`singular_objective`].
pub fn approx_xi_n<T: Real>(tree: &ScenarioTree<T>, tau: &StoppingTime, n: u32) -> Result<XiApproximation<T>> {
    if n == 0 {
        return Err(Error::InvalidParam("n must be >= 1".into()));
    }
    let h = tree.step().as_f64();
    let lead = 1.0 / (n as f64).sqrt();
    let lead_steps = ((lead / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let rate = T::lit(n as f64) * tree.step();
    let xi = AdaptedProcess::from_fn(tree.num_periods(), tau.num_leaves(), |t, leaf| {
        let onset = tau.at(leaf).saturating_sub(lead_steps);
        rate * T::lit(t.saturating_sub(onset) as f64)
    });
    Ok(XiApproximation {
        xi: SingularControl::new(xi)?,
        n,
        lead_steps,
        coarse_grid: h > lead,
    })
}

/// Decomposition `J(xi_n) = I_n + J_n + K_n` of an [`approx_xi_n`] control:
/// `I_n` charges `k(tau)` with the mass spent up to `tau`, `J_n` the deviation
/// `k(t) - k(tau)` on the lead window, `K_n` the mass spent after `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproximationTerms<T> {
    pub n: u32,
    pub lead_steps: usize,
    pub value: T,
    pub target: T,
    pub error: T,
    pub i_n: T,
    pub j_n: T,
    pub k_n: T,
    /// `|I_n - E[k(tau)]| + |J_n| + |K_n|`.
    pub bound: T,
    /// `n e^{-sqrt(n)}`; multiply by `kappa` for the `K_n` bound.
    pub k_rate: T,
    /// Largest mass left after `tau`; `kappa` times this bounds `|K_n|`.
    pub tail_mass: T,
}

pub fn approximation_terms<T: Real>(
    tree: &ScenarioTree<T>,
    k: &AdaptedProcess<T>,
    tau: &StoppingTime,
    approx: &XiApproximation<T>,
) -> Result<ApproximationTerms<T>> {
    let xi = &approx.xi;
    let value = singular_objective(tree, k, xi)?;
    let target = expected_reward(tree, k, tau);
    let (mut i_n, mut j_n, mut k_n) = (T::zero(), T::zero(), T::zero());
    let mut tail_mass = T::zero();
    for (leaf, &p) in tree.leaf_prob().iter().enumerate() {
        let stop = tau.at(leaf);
        let onset = stop.saturating_sub(approx.lead_steps);
        let k_stop = k.at(stop, leaf);
        for t in onset + 1..=stop {
            let m = xi.mass(t, leaf);
            i_n = i_n + p * k_stop * m;
            j_n = j_n + p * (k.at(t, leaf) - k_stop) * m;
        }
        for t in stop + 1..=tree.num_periods() {
            k_n = k_n + p * k.at(t, leaf) * xi.mass(t, leaf);
        }
        tail_mass = tail_mass.max(survival(xi.at(stop, leaf)));
    }
    let nf = T::lit(approx.n as f64);
    Ok(ApproximationTerms {
        n: approx.n,
        lead_steps: approx.lead_steps,
        value,
        target,
        error: (value - target).abs(),
        i_n,
        j_n,
        k_n,
        bound: (i_n - target).abs() + j_n.abs() + k_n.abs(),
        k_rate: nf * (-nf.sqrt()).exp(),
        tail_mass,
    })
}

/// `sup_G E[sum k dG]` with a maximizer.
#[derive(Debug, Clone)]
pub struct RandomizedOptimum<T> {
    pub value: T,
    pub control: RandomizedControl<T>,
    pub stopping: StoppingSolution<T>,
}

/// `sup_xi J(xi)` with a maximizer.
#[derive(Debug, Clone)]
pub struct SingularOptimum<T> {
    pub value: T,
    pub control: SingularControl<T>,
    pub stopping: StoppingSolution<T>,
}

/// Solves the stopping problem and lifts `tau*` to `G* = 1{t >= tau*}`; the
/// reported value is `G*` evaluated afresh.
pub fn optimize_randomized<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    limits: &EnumerationLimits,
) -> Result<RandomizedOptimum<T>> {
    let stopping = solve(tree, info, k, limits)?;
    let control = g_from_tau(&stopping.optimal_tau, tree.num_periods());
    let value = randomized_value(tree, info, k, &control)?;
    Ok(RandomizedOptimum {
        value,
        control,
        stopping,
    })
}

/// Like [`optimize_randomized`], with `xi* = -ln(1 - G*)`.
pub fn optimize_singular<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    limits: &EnumerationLimits,
) -> Result<SingularOptimum<T>> {
    let stopping = solve(tree, info, k, limits)?;
    let control = xi_from_tau(&stopping.optimal_tau, tree.num_periods());
    let value = singular_value(tree, info, k, &control)?;
    Ok(SingularOptimum {
        value,
        control,
        stopping,
    })
}

/// `E[int_0^{G(N)} k(alpha(r)) dr]`, summed exactly over the jump levels of
/// `G`; equals `E[sum k dG]` for every admissible `G`.
pub fn time_change_value<T: Real>(
    tree: &ScenarioTree<T>,
    k: &AdaptedProcess<T>,
    g: &RandomizedControl<T>,
) -> Result<T> {
    check_control_shape(tree, k, &g.g)?;
    let mut levels: Vec<T> = g.g.values().iter().copied().filter(|&v| v > T::zero()).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
    levels.dedup();
    let mut total = T::zero();
    let mut lower = T::zero();
    for r in levels {
        // alpha is constant on (lower, r]
        let alpha = first_passage(g, r);
        let slice: T = tree
            .leaf_prob()
            .iter()
            .zip(&alpha)
            .enumerate()
            .filter_map(|(leaf, (&p, t))| t.map(|t| p * k.at(t, leaf)))
            .sum();
        total = total + (r - lower) * slice;
        lower = r;
    }
    Ok(total)
}

/// Random `G` adapted to `info`. Each cell value is drawn between the largest
/// previous value on the cell and 1; strict controls end at 1.
pub fn random_randomized_control<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    info: &InformationStructure,
    strict: bool,
) -> RandomizedControl<T> {
    let n = info.num_periods();
    let leaves = info.num_leaves();
    let mut rows = vec![vec![0.0f64; leaves]; n + 1];
    for t in 0..=n {
        for cell in info.at(t).cells() {
            let floor = if t == 0 {
                0.0
            } else {
                cell.iter().map(|&l| rows[t - 1][l]).fold(0.0, f64::max)
            };
            let v = if strict && t == n {
                1.0
            } else if rng.gen_bool(0.3) {
                floor
            } else {
                floor + rng.gen::<f64>() * (1.0 - floor)
            };
            for &l in cell {
                rows[t][l] = v;
            }
        }
    }
    let rows = rows.into_iter().map(|r| r.into_iter().map(T::lit).collect()).collect();
    RandomizedControl::from_rows(rows).expect("monotone by construction")
}

/// Random finite `xi` adapted to `info`, with per-step increments in
/// `[0, max_increment]`.
pub fn random_finite_xi<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    info: &InformationStructure,
    max_increment: f64,
) -> SingularControl<T> {
    let n = info.num_periods();
    let leaves = info.num_leaves();
    let mut rows = vec![vec![0.0f64; leaves]; n + 1];
    for t in 0..=n {
        for cell in info.at(t).cells() {
            let floor = if t == 0 {
                0.0
            } else {
                cell.iter().map(|&l| rows[t - 1][l]).fold(0.0, f64::max)
            };
            let step = if rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen::<f64>() * max_increment
            };
            for &l in cell {
                rows[t][l] = floor + step;
            }
        }
    }
    let rows = rows.into_iter().map(|r| r.into_iter().map(T::lit).collect()).collect();
    SingularControl::from_rows(rows).expect("monotone by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{lagged_information, t2, LagSpec};
    use crate::stopping::{enumerate_stopping_times, value_of};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn half_half_control_on_t2() {
        let fx = t2::<f64>();
        let g = RandomizedControl::from_rows(vec![vec![0.0; 4], vec![0.5; 4], vec![1.0; 4]]).unwrap();
        let info = InformationStructure::trivial(4, 2);
        assert!(g.is_strict());
        assert_eq!(randomized_value(&fx.tree, &info, &fx.reward, &g).unwrap(), 1.125);
        assert_eq!(tau_from_g(&g, 0.75).unwrap(), StoppingTime::constant(4, 2));
        assert_eq!(tau_from_g(&g, 0.5).unwrap(), StoppingTime::constant(4, 1));
        assert_eq!(tau_from_g(&g, 0.0).unwrap(), StoppingTime::constant(4, 0));
    }

    #[test]
    fn terminal_jump_gives_terminal_reward() {
        let fx = t2::<f64>();
        let g = g_from_tau(&StoppingTime::constant(4, 2), 2);
        let v = stieltjes_value(&fx.tree, &fx.reward, &g).unwrap();
        assert_eq!(v, fx.reward.expectation(&fx.tree, 2));
    }

    #[test]
    fn inadmissible_controls_are_rejected() {
        assert!(RandomizedControl::from_rows(vec![vec![0.5], vec![0.2]]).is_err());
        assert!(RandomizedControl::from_rows(vec![vec![0.0], vec![1.5]]).is_err());
        assert!(SingularControl::from_rows(vec![vec![1.0], vec![0.5]]).is_err());
        assert!(SingularControl::from_rows(vec![vec![-1.0], vec![INF]]).is_err());
        assert!(SingularControl::from_rows(vec![vec![f64::NAN], vec![INF]]).is_err());
    }

    #[test]
    fn non_adapted_control_is_rejected() {
        let fx = t2::<f64>();
        let info = lagged_information(&fx.tree, LagSpec::delayed(1)).unwrap();
        let g = g_from_tau(&StoppingTime::new(vec![1, 1, 2, 2]), 2);
        assert!(matches!(
            randomized_value(&fx.tree, &info, &fx.reward, &g),
            Err(Error::NotAdapted { t: 1, .. })
        ));
    }

    #[test]
    fn singular_examples() {
        let fx = t2::<f64>();
        let info = fx.tree.filtration();
        let xi = xi_from_tau::<f64>(&StoppingTime::constant(4, 0), 2);
        assert_eq!(xi.at(0, 0), INF);
        assert_eq!(singular_value(&fx.tree, &info, &fx.reward, &xi).unwrap(), 0.0);
        let tau = StoppingTime::new(vec![1, 1, 2, 2]);
        let xi = xi_from_tau::<f64>(&tau, 2);
        assert!(xi.is_strict());
        assert_eq!(
            singular_value(&fx.tree, &info, &fx.reward, &xi).unwrap(),
            value_of(&fx.tree, &info, &fx.reward, &tau).unwrap()
        );
    }

    #[test]
    fn linear_xi_matches_direct_sum() {
        // xi(t) = t: masses (0, 1 - e^{-1}, e^{-1} - e^{-2}); E[k] = (0, 1, 1.25)
        let fx = t2::<f64>();
        let xi = SingularControl::from_rows(vec![vec![0.0; 4], vec![1.0; 4], vec![2.0; 4]]).unwrap();
        assert_eq!(xi.class(), ControlClass::Extended);
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        let expected = (1.0 - e1) + 1.25 * (e1 - e2);
        let j = singular_value(&fx.tree, &fx.tree.filtration(), &fx.reward, &xi).unwrap();
        assert!((j - expected).abs() < 1e-15);
        let g = g_from_xi(&xi);
        let lam = stieltjes_value(&fx.tree, &fx.reward, &g).unwrap();
        assert!((j - lam).abs() < 1e-15);
    }

    #[test]
    fn mapping_examples() {
        let ln2 = SingularControl::from_rows(vec![vec![0.0], vec![2f64.ln()], vec![2f64.ln()]]).unwrap();
        let g = g_from_xi(&ln2);
        assert_eq!(g.class(), ControlClass::Extended);
        assert!((g.at(1, 0) - 0.5).abs() < 1e-16);
        let zero = RandomizedControl::from_rows(vec![vec![0.0], vec![0.0]]).unwrap();
        assert!(xi_from_g(&zero).values().values().iter().all(|&x| x == 0.0));
        let c = 1.0 - (-1.0f64).exp();
        let g = RandomizedControl::from_rows(vec![vec![0.0], vec![c], vec![c]]).unwrap();
        assert!((xi_from_g(&g).at(1, 0) - 1.0).abs() < 1e-15);
        let strict = xi_from_tau::<f64>(&StoppingTime::constant(3, 1), 2);
        assert!(g_from_xi(&strict).values().slice(2).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tau_from_g_needs_strict_and_valid_level() {
        let g = RandomizedControl::from_rows(vec![vec![0.0], vec![0.5]]).unwrap();
        assert!(tau_from_g(&g, 0.2).is_err());
        let g = g_from_tau::<f64>(&StoppingTime::constant(1, 1), 1);
        assert!(tau_from_g(&g, 1.0).is_err());
        assert!(tau_from_g(&g, -0.1).is_err());
    }

    #[test]
    fn approx_g_n_is_exact_after_time_zero() {
        let fx = t2::<f64>();
        let tau = StoppingTime::new(vec![1, 1, 2, 2]);
        for n in [1, 5, 50] {
            assert_eq!(approx_g_n(&fx.tree, &tau, n).unwrap(), g_from_tau(&tau, 2));
        }
    }

    #[test]
    fn approx_g_n_at_time_zero_stays_within_bound() {
        let fx = t2::<f64>();
        let tau = StoppingTime::constant(4, 0);
        for n in [1, 4, 16, 64] {
            let g = approx_g_n(&fx.tree, &tau, n).unwrap();
            let v = stieltjes_value(&fx.tree, &fx.reward, &g).unwrap();
            let bound = approx_g_n_bound(&fx.tree, &fx.reward, &tau, n).unwrap();
            assert!((v - 0.0).abs() <= bound + 1e-15, "n={n}");
        }
        // constant k: continuity at 0 closes the gap completely
        let k = AdaptedProcess::constant(2, 4, 3.0);
        let g = approx_g_n(&fx.tree, &tau, 7).unwrap();
        assert!((stieltjes_value(&fx.tree, &k, &g).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn approx_xi_n_shape() {
        let tree = ScenarioTree::<f64>::uniform(0.05, &[1; 20]).unwrap();
        let tau = StoppingTime::constant(1, 12);
        let a = approx_xi_n(&tree, &tau, 4).unwrap();
        // 1/sqrt(4) = 0.5 -> 10 steps, onset at 2
        assert_eq!(a.lead_steps, 10);
        assert!(!a.coarse_grid);
        assert_eq!(a.xi.at(2, 0), 0.0);
        assert!((a.xi.at(3, 0) - 0.2).abs() < 1e-15);
        assert_eq!(a.xi.class(), ControlClass::Extended);
        // n h >= 40 with a one-step lead saturates to the indicator
        let a = approx_xi_n(&tree, &tau, 1000).unwrap();
        assert_eq!(a.lead_steps, 1);
        let g = g_from_xi(&a.xi);
        let ind = g_from_tau::<f64>(&tau, 20);
        for t in 0..=20 {
            assert!((g.at(t, 0) - ind.at(t, 0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn approximation_terms_add_up() {
        let fx = t2::<f64>();
        let tau = StoppingTime::new(vec![1, 1, 2, 2]);
        for n in [1, 4, 16, 100] {
            let a = approx_xi_n(&fx.tree, &tau, n).unwrap();
            let terms = approximation_terms(&fx.tree, &fx.reward, &tau, &a).unwrap();
            assert!((terms.value - (terms.i_n + terms.j_n + terms.k_n)).abs() < 1e-14);
            assert!(terms.error <= terms.bound + 1e-14);
        }
    }

    #[test]
    fn optimizers_on_t2() {
        let fx = t2::<f64>();
        let info = lagged_information(&fx.tree, LagSpec::delayed(1)).unwrap();
        let lim = EnumerationLimits::default();
        let r = optimize_randomized(&fx.tree, &info, &fx.reward, &lim).unwrap();
        assert_eq!(r.value, 1.25);
        let s = optimize_singular(&fx.tree, &info, &fx.reward, &lim).unwrap();
        assert_eq!(s.value, 1.25);
        for leaf in 0..4 {
            assert_eq!(s.control.at(1, leaf), 0.0);
            assert_eq!(s.control.at(2, leaf), INF);
        }
        let k = AdaptedProcess::constant(2, 4, 0.7);
        assert_eq!(optimize_randomized(&fx.tree, &info, &k, &lim).unwrap().value, 0.7);
    }

    #[test]
    fn random_controls_are_admissible_and_dominated() {
        let fx = t2::<f64>();
        let lim = EnumerationLimits::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for info in [
            fx.tree.filtration(),
            lagged_information(&fx.tree, LagSpec::delayed(1)).unwrap(),
        ] {
            let phi = optimize_randomized(&fx.tree, &info, &fx.reward, &lim).unwrap().value;
            for _ in 0..100 {
                let g = random_randomized_control::<f64, _>(&mut rng, &info, true);
                assert!(g.is_strict());
                let v = randomized_value(&fx.tree, &info, &fx.reward, &g).unwrap();
                assert!(v <= phi + 1e-12);
                let tc = time_change_value(&fx.tree, &fx.reward, &g).unwrap();
                assert!((v - tc).abs() <= 1e-10);
                let xi = xi_from_g(&g);
                assert!(singular_value(&fx.tree, &info, &fx.reward, &xi).unwrap() <= phi + 1e-12);
            }
        }
    }

    #[test]
    fn time_change_handles_extended_controls() {
        let fx = t2::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let info = fx.tree.filtration();
        for _ in 0..50 {
            let g = random_randomized_control::<f64, _>(&mut rng, &info, false);
            let v = stieltjes_value(&fx.tree, &fx.reward, &g).unwrap();
            assert!((v - time_change_value(&fx.tree, &fx.reward, &g).unwrap()).abs() <= 1e-10);
        }
    }

    #[test]
    fn extreme_points_reproduce_stopping_values() {
        let fx = t2::<f64>();
        let info = fx.tree.filtration();
        for tau in enumerate_stopping_times(&info, &EnumerationLimits::default()).unwrap() {
            let g = g_from_tau(&tau, 2);
            let direct = value_of(&fx.tree, &info, &fx.reward, &tau).unwrap();
            assert_eq!(randomized_value(&fx.tree, &info, &fx.reward, &g).unwrap(), direct);
            assert_eq!(
                singular_value(&fx.tree, &info, &fx.reward, &xi_from_g(&g)).unwrap(),
                direct
            );
            for r in [0.1, 0.5, 0.9] {
                assert_eq!(tau_from_g(&g, r).unwrap(), tau);
            }
        }
    }

    #[test]
    fn sub_unit_vertex_controls_do_not_beat_full_mass_for_nonnegative_rewards() {
        let fx = t2::<f64>();
        let info = fx.tree.filtration();
        let lim = EnumerationLimits::default();
        let phi = optimize_randomized(&fx.tree, &info, &fx.reward, &lim).unwrap().value;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for tau in enumerate_stopping_times(&info, &lim).unwrap() {
            for m in [0.25, 0.5, 0.75, 1.0] {
                let g = g_from_tau::<f64>(&tau, 2).scaled(m).unwrap();
                let v = randomized_value(&fx.tree, &info, &fx.reward, &g).unwrap();
                if v > best.0 + 1e-12 {
                    best = (v, m);
                }
            }
        }
        assert_eq!(best, (phi, 1.0));
    }

    #[test]
    fn f32_controls_agree_with_f64() {
        let fx = t2::<f32>();
        let info = fx.tree.filtration();
        let s = optimize_singular(&fx.tree, &info, &fx.reward, &EnumerationLimits::default()).unwrap();
        assert!((s.value - 1.25).abs() < 1e-6);
    }
}
