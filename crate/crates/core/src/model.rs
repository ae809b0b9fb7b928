//! Test models: the two-period fixture, binomial GBM lattices with a
//! discounted sale reward, lagged information flows and seeded random trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{InformationStructure, Partition};
use crate::process::AdaptedProcess;
use crate::scalar::Real;
use crate::stopping::count_stopping_times;
use crate::tree::ScenarioTree;

/// Tree plus reward process.
#[derive(Debug, Clone)]
pub struct Fixture<T> {
    pub tree: ScenarioTree<T>,
    pub reward: AdaptedProcess<T>,
}

/// Two-period binary tree with equal branch probabilities; leaves are ordered
/// `uu, ud, du, dd` and the horizon is `T = 1`.
///
/// Rewards: `k(0) = 0`, `k(1) = 2` on the up node and `0` on the down node,
/// `k(2) = (3, 1, 1, 0)`. The full-information optimal value is `1.25`.
pub fn t2<T: Real>() -> Fixture<T> {
    let tree = ScenarioTree::uniform(T::lit(0.5), &[2, 2]).expect("valid fixture");
    let rows = [[0.0; 4], [2.0, 2.0, 0.0, 0.0], [3.0, 1.0, 1.0, 0.0]];
    let reward = AdaptedProcess::from_rows(rows.iter().map(|r| r.iter().map(|&v| T::lit(v)).collect()).collect())
        .expect("valid fixture");
    Fixture { tree, reward }
}

/// Default ceiling on the number of branching levels of a GBM lattice.
pub const DEFAULT_GBM_CAP: usize = 25;

fn one() -> usize {
    1
}

/// Geometric Brownian motion `dX = X (mu dt + sigma dB)` with reward
/// `k(t) = exp(-rho t) (X(t) - a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmParams<T> {
    pub x0: T,
    pub mu: T,
    pub sigma: T,
    pub rho: T,
    pub a: T,
    #[serde(rename = "T")]
    pub horizon: T,
    #[serde(rename = "N")]
    pub periods: usize,
    /// Branch only every `shock_every` periods, with the shock scaled to the
    /// elapsed time. `1` gives the plain binomial lattice.
    #[serde(default = "one")]
    pub shock_every: usize,
}

impl<T: Real> GbmParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParam(msg.to_string()));
        if !(self.x0 > T::zero()) {
            return bad("x0 must be > 0");
        }
        if !(self.sigma > T::zero()) {
            return bad("sigma must be > 0");
        }
        if !(self.horizon > T::zero()) {
            return bad("T must be > 0");
        }
        if self.periods == 0 {
            return bad("N must be >= 1");
        }
        if self.shock_every == 0 {
            return bad("shock_every must be >= 1");
        }
        if self.rho < T::zero() || self.a < T::zero() {
            return bad("rho and a must be >= 0");
        }
        Ok(())
    }

    pub fn step(&self) -> T {
        self.horizon / T::lit(self.periods as f64)
    }

    fn num_shocks(&self) -> usize {
        self.periods.div_ceil(self.shock_every)
    }
}

#[derive(Debug, Clone)]
pub struct GbmLattice<T> {
    pub tree: ScenarioTree<T>,
    pub price: AdaptedProcess<T>,
    pub reward: AdaptedProcess<T>,
}

/// Non-recombining binomial lattice for [`GbmParams`] with the default cap.
pub fn gbm_lattice<T: Real>(params: &GbmParams<T>) -> Result<GbmLattice<T>> {
    gbm_lattice_with_cap(params, DEFAULT_GBM_CAP)
}

/// Each branching step multiplies the price by
/// `exp(+-sigma sqrt(m h) + mu h)` with probability 1/2 each, where `m` is the
/// number of periods the shock covers; other steps apply the drift `exp(mu h)`.
pub fn gbm_lattice_with_cap<T: Real>(params: &GbmParams<T>, cap: usize) -> Result<GbmLattice<T>> {
    params.validate()?;
    if params.num_shocks() > cap {
        return Err(Error::TooLarge {
            reason: format!("{} branching levels exceed the lattice cap {cap}", params.num_shocks()),
            estimated: 2f64.powi(params.num_shocks() as i32),
        });
    }
    let n = params.periods;
    let h = params.step();
    let half = T::lit(0.5);
    let drift = (params.mu * h).exp();

    let mut parent = vec![None];
    let mut prob = vec![T::one()];
    let mut price = vec![params.x0];
    let mut frontier = vec![0usize];
    for t in 0..n {
        let mut next = Vec::new();
        if t % params.shock_every == 0 {
            let covered = params.shock_every.min(n - t);
            let jump = params.sigma * (T::lit(covered as f64) * h).sqrt();
            let up = (jump + params.mu * h).exp();
            let down = (-jump + params.mu * h).exp();
            for &node in &frontier {
                for factor in [up, down] {
                    next.push(parent.len());
                    parent.push(Some(node));
                    prob.push(half);
                    price.push(price[node] * factor);
                }
            }
        } else {
            for &node in &frontier {
                next.push(parent.len());
                parent.push(Some(node));
                prob.push(T::one());
                price.push(price[node] * drift);
            }
        }
        frontier = next;
    }
    let tree = ScenarioTree::new(n, h, parent, prob)?;
    let price = AdaptedProcess::from_node_values(&tree, &price)?;
    let reward = price.map(|t, _, x| (-params.rho * tree.time_at(t)).exp() * (x - params.a));
    Ok(GbmLattice { tree, price, reward })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagDirection {
    Delayed,
    Advanced,
}

/// Information lag (or lead) in whole grid steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagSpec {
    pub delta_steps: usize,
    pub direction: LagDirection,
}

impl LagSpec {
    pub fn delayed(delta_steps: usize) -> Self {
        Self {
            delta_steps,
            direction: LagDirection::Delayed,
        }
    }

    pub fn advanced(delta_steps: usize) -> Self {
        Self {
            delta_steps,
            direction: LagDirection::Advanced,
        }
    }
}

/// `H_t = F_{max(t - delta, 0)}` (delayed) or `H_t = F_{min(t + delta, N)}`
/// (advanced).
pub fn lagged_information<T: Real>(tree: &ScenarioTree<T>, lag: LagSpec) -> Result<InformationStructure> {
    let n = tree.num_periods();
    if lag.delta_steps > n {
        return Err(Error::InvalidParam(format!(
            "lag of {} steps exceeds the horizon {n}",
            lag.delta_steps
        )));
    }
    let parts = (0..=n)
        .map(|t| {
            let s = match lag.direction {
                LagDirection::Delayed => t.saturating_sub(lag.delta_steps),
                LagDirection::Advanced => (t + lag.delta_steps).min(n),
            };
            tree.ancestor_partition(s)
        })
        .collect();
    InformationStructure::new(parts)
}

/// Knobs for [`random_tree_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomTreeSpec {
    pub seed: u64,
    pub max_depth: usize,
    pub max_branching: usize,
    /// Probability of drawing a nested coarsening of `F` rather than an
    /// arbitrary partition sequence.
    pub filtration_prob: f64,
    pub max_leaves: usize,
    /// Trees whose stopping-time count exceeds this are redrawn.
    pub max_stopping_times: f64,
}

impl RandomTreeSpec {
    pub fn new(seed: u64, max_depth: usize, max_branching: usize) -> Self {
        Self {
            seed,
            max_depth,
            max_branching,
            filtration_prob: 0.8,
            max_leaves: 64,
            max_stopping_times: 1.0e5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomInstance<T> {
    pub tree: ScenarioTree<T>,
    pub reward: AdaptedProcess<T>,
    pub info: InformationStructure,
}

/// Seeded random tree with rewards in `[-10, 10]` and a random information
/// structure; see [`random_tree_with`].
pub fn random_tree<T: Real>(seed: u64, max_depth: usize, max_branching: usize) -> Result<RandomInstance<T>> {
    random_tree_with(&RandomTreeSpec::new(seed, max_depth, max_branching))
}

/// Deterministic in the spec: the generator is ChaCha8 seeded with
/// `seed_from_u64(spec.seed)`.
pub fn random_tree_with<T: Real>(spec: &RandomTreeSpec) -> Result<RandomInstance<T>> {
    if spec.max_depth == 0 || spec.max_depth > 6 {
        return Err(Error::InvalidParam("max_depth must be in 1..=6".into()));
    }
    if spec.max_branching == 0 || spec.max_branching > 3 {
        return Err(Error::InvalidParam("max_branching must be in 1..=3".into()));
    }
    if spec.max_leaves == 0 || spec.max_leaves > 64 {
        return Err(Error::InvalidParam("max_leaves must be in 1..=64".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    loop {
        let inst = draw_instance(&mut rng, spec)?;
        if count_stopping_times(&inst.info).0 <= spec.max_stopping_times {
            return Ok(inst);
        }
    }
}

fn draw_instance<T: Real>(rng: &mut ChaCha8Rng, spec: &RandomTreeSpec) -> Result<RandomInstance<T>> {
    let depth = rng.gen_range(1..=spec.max_depth);
    let mut parent = vec![None];
    let mut prob = vec![T::one()];
    let mut frontier = vec![0usize];
    for _ in 0..depth {
        let mut next = Vec::new();
        for (i, &node) in frontier.iter().enumerate() {
            // every remaining frontier node still needs at least one child
            let room = spec.max_leaves - next.len() - (frontier.len() - i - 1);
            let b = rng.gen_range(1..=spec.max_branching).min(room.max(1));
            let weights: Vec<f64> = (0..b).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in weights {
                next.push(parent.len());
                parent.push(Some(node));
                prob.push(T::lit(w / total));
            }
        }
        frontier = next;
    }
    let tree = ScenarioTree::new(depth, T::one() / T::lit(depth as f64), parent, prob)?;
    let node_reward: Vec<T> = (0..tree.num_nodes())
        .map(|_| T::lit(rng.gen_range(-10.0..=10.0)))
        .collect();
    let reward = AdaptedProcess::from_node_values(&tree, &node_reward)?;

    let leaves = tree.num_leaves();
    let info = if rng.gen_bool(spec.filtration_prob) {
        let mut parts = vec![Partition::trivial(leaves)];
        for t in 1..=depth {
            let prev = parts[t - 1].clone();
            // group the time-t nodes inside each previous cell
            let mut group_of_node = std::collections::HashMap::new();
            for cell in prev.cells() {
                let mut nodes: Vec<usize> = cell.iter().map(|&l| tree.ancestor(t, l)).collect();
                nodes.dedup();
                let groups = rng.gen_range(1..=nodes.len());
                for node in nodes {
                    group_of_node.insert(node, rng.gen_range(0..groups));
                }
            }
            let labels: Vec<(usize, usize)> = (0..leaves)
                .map(|l| (prev.cell_of(l), group_of_node[&tree.ancestor(t, l)]))
                .collect();
            parts.push(Partition::from_labels(&labels));
        }
        InformationStructure::new(parts)?
    } else {
        let parts = (0..=depth)
            .map(|_| {
                let m = rng.gen_range(1..=3usize.min(leaves));
                let labels: Vec<usize> = (0..leaves).map(|_| rng.gen_range(0..m)).collect();
                Partition::from_labels(&labels)
            })
            .collect();
        InformationStructure::new(parts)?
    };
    Ok(RandomInstance { tree, reward, info })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::check_adapted;

    fn gbm(x0: f64, mu: f64, sigma: f64, rho: f64, a: f64, horizon: f64, periods: usize) -> GbmParams<f64> {
        GbmParams {
            x0,
            mu,
            sigma,
            rho,
            a,
            horizon,
            periods,
            shock_every: 1,
        }
    }

    #[test]
    fn t2_fixture_shape() {
        let fx = t2::<f64>();
        assert_eq!(fx.tree.num_leaves(), 4);
        assert!(check_adapted(&fx.reward, &fx.tree.filtration()).adapted);
    }

    #[test]
    fn degenerate_volatility_keeps_price_flat() {
        let lat = gbm_lattice(&gbm(3.0, 0.0, 1e-9, 0.0, 0.0, 1.0, 6)).unwrap();
        assert!(lat.price.values().iter().all(|&x| ((x - 3.0) / 3.0).abs() < 1e-6));
    }

    #[test]
    fn two_step_martingale_up_to_convexity() {
        // E[X(T)] = cosh(0.2 sqrt(0.5))^2 ~ 1.0201
        let lat = gbm_lattice(&gbm(1.0, 0.0, 0.2, 0.0, 0.0, 1.0, 2)).unwrap();
        let m = lat.price.expectation(&lat.tree, 2);
        let c = (0.2f64 * 0.5f64.sqrt()).cosh();
        assert!((m - c * c).abs() < 1e-14);
        assert!((m - 1.0).abs() < 0.021);
    }

    #[test]
    fn reward_at_root_is_x0_minus_a() {
        let lat = gbm_lattice(&gbm(2.0, 0.05, 0.3, 0.5, 1.5, 1.0, 3)).unwrap();
        assert!(lat.reward.slice(0).iter().all(|&k| (k - 0.5).abs() < 1e-15));
    }

    #[test]
    fn lattice_mean_tracks_gbm_mean() {
        let p = gbm(1.0, 0.1, 0.3, 0.0, 0.0, 1.0, 12);
        let lat = gbm_lattice(&p).unwrap();
        for t in 0..=12 {
            let tt = lat.tree.time_at(t);
            let exact = ((p.mu + 0.5 * p.sigma * p.sigma) * tt).exp();
            let lattice = lat.price.expectation(&lat.tree, t);
            assert!((lattice - exact).abs() <= 0.05 * tt + 1e-15, "t={t}");
        }
    }

    #[test]
    fn lattice_cap() {
        assert!(matches!(
            gbm_lattice_with_cap(&gbm(1.0, 0.0, 0.2, 0.0, 0.0, 1.0, 8), 7),
            Err(Error::TooLarge { .. })
        ));
        let mut p = gbm(1.0, 0.0, 0.2, 0.0, 0.0, 1.0, 8);
        p.shock_every = 2;
        let lat = gbm_lattice_with_cap(&p, 4).unwrap();
        assert_eq!(lat.tree.num_leaves(), 16);
    }

    #[test]
    fn invalid_params() {
        assert!(gbm_lattice(&gbm(0.0, 0.0, 0.2, 0.0, 0.0, 1.0, 2)).is_err());
        assert!(gbm_lattice(&gbm(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2)).is_err());
        assert!(gbm_lattice(&gbm(1.0, 0.0, 0.2, 0.0, 0.0, 1.0, 0)).is_err());
    }

    #[test]
    fn lag_examples() {
        let fx = t2::<f64>();
        let f = fx.tree.filtration();
        assert_eq!(lagged_information(&fx.tree, LagSpec::delayed(0)).unwrap(), f);
        assert_eq!(
            lagged_information(&fx.tree, LagSpec::delayed(2)).unwrap(),
            InformationStructure::trivial(4, 2)
        );
        let d1 = lagged_information(&fx.tree, LagSpec::delayed(1)).unwrap();
        assert_eq!(d1.at(0).num_cells(), 1);
        assert_eq!(d1.at(1).num_cells(), 1);
        assert_eq!(d1.at(2), f.at(1));
        assert!(d1.is_filtration());
        let a1 = lagged_information(&fx.tree, LagSpec::advanced(1)).unwrap();
        assert_eq!(a1.at(0), f.at(1));
        assert_eq!(a1.at(2), f.at(2));
        assert!(a1.is_filtration());
        assert!(lagged_information(&fx.tree, LagSpec::delayed(3)).is_err());
    }

    #[test]
    fn random_tree_is_deterministic() {
        let a = random_tree::<f64>(17, 4, 3).unwrap();
        let b = random_tree::<f64>(17, 4, 3).unwrap();
        assert_eq!(a.tree, b.tree);
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.info, b.info);
    }

    #[test]
    fn random_trees_are_well_formed() {
        let mut nested = 0;
        for seed in 0..100 {
            let inst = random_tree::<f64>(seed, 6, 3).unwrap();
            assert!(inst.tree.num_leaves() <= 64);
            assert!(inst.reward.values().iter().all(|v| (-10.0..=10.0).contains(v)));
            assert!(check_adapted(&inst.reward, &inst.tree.filtration()).adapted);
            if inst.info.is_filtration() {
                nested += 1;
                // coarsenings of F at every t
                assert!(inst.info.is_coarser_than(&inst.tree.filtration()));
            }
        }
        assert!(nested > 60);
    }

    #[test]
    fn forced_filtration() {
        let mut spec = RandomTreeSpec::new(3, 4, 3);
        spec.filtration_prob = 1.0;
        for seed in 0..50 {
            spec.seed = seed;
            assert!(random_tree_with::<f64>(&spec).unwrap().info.is_filtration());
        }
    }
}
