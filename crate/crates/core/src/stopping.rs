//! Stopping times under a general information structure.
//!
//! Two independent solvers live here: exhaustive enumeration of every
//! admissible stopping time (works for any information structure), and
//! backward induction on the conditioned reward `E[k(t) | H_t]`, which needs
//! the structure to be nested.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::info::InformationStructure;
use crate::process::{cell_average, condition_process, AdaptedProcess};
use crate::scalar::Real;
use crate::tree::ScenarioTree;

/// Stopping index per leaf, each in `0..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct StoppingTime(Vec<usize>);

impl StoppingTime {
    pub fn new(tau: Vec<usize>) -> Self {
        Self(tau)
    }

    pub fn constant(num_leaves: usize, t: usize) -> Self {
        Self(vec![t; num_leaves])
    }

    #[inline]
    pub fn at(&self, leaf: usize) -> usize {
        self.0[leaf]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn num_leaves(&self) -> usize {
        self.0.len()
    }

    /// `{tau <= t}` must be a union of cells of `info` at every `t`, and
    /// `tau <= N`.
    pub fn check_measurable(&self, info: &InformationStructure) -> Result<()> {
        if self.0.len() != info.num_leaves() {
            return Err(Error::Shape(format!(
                "stopping time has {} leaves, information structure {}",
                self.0.len(),
                info.num_leaves()
            )));
        }
        let n = info.num_periods();
        if let Some(leaf) = self.0.iter().position(|&t| t > n) {
            return Err(Error::InvalidParam(format!(
                "tau({leaf}) = {} exceeds the horizon {n}",
                self.0[leaf]
            )));
        }
        for t in 0..=n {
            if let Some(cell) = info.at(t).first_split_cell(|l| self.0[l] <= t) {
                return Err(Error::NotMeasurable { t, cell });
            }
        }
        Ok(())
    }
}

/// `E[k(tau)]` without any measurability check.
pub fn expected_reward<T: Real>(tree: &ScenarioTree<T>, k: &AdaptedProcess<T>, tau: &StoppingTime) -> T {
    tree.leaf_prob()
        .iter()
        .enumerate()
        .map(|(leaf, &p)| p * k.at(tau.at(leaf), leaf))
        .sum()
}

/// `E[k(tau)]` for an admissible `tau`.
pub fn value_of<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    tau: &StoppingTime,
) -> Result<T> {
    k.check_shape(tree)?;
    tau.check_measurable(info)?;
    Ok(expected_reward(tree, k, tau))
}

/// Size limits for exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct EnumerationLimits {
    /// At most 64: leaf sets are handled as 64-bit masks.
    pub max_leaves: usize,
    pub max_periods: usize,
    /// Ceiling on the (estimated) number of stopping times.
    pub max_count: f64,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        Self {
            max_leaves: 64,
            max_periods: 6,
            max_count: 5.0e6,
        }
    }
}

/// Number of admissible stopping times: exact for filtrations, an upper bound
/// (`prod_t 2^{cells at t}`) otherwise. The flag tells which.
pub fn count_stopping_times(info: &InformationStructure) -> (f64, bool) {
    let n = info.num_periods();
    if info.is_filtration() {
        // ways(t, C) = 1 + prod over child cells C' of ways(t + 1, C')
        let mut ways = vec![1.0f64; info.at(n).num_cells()];
        for t in (0..n).rev() {
            let here = info.at(t);
            let next = info.at(t + 1);
            let mut prod = vec![1.0f64; here.num_cells()];
            for (c, cell) in next.cells().iter().enumerate() {
                prod[here.cell_of(cell[0])] *= ways[c];
            }
            ways = prod.into_iter().map(|p| 1.0 + p).collect();
        }
        (ways.iter().product(), true)
    } else {
        let bits: usize = (0..n).map(|t| info.at(t).num_cells()).sum();
        (2f64.powi(bits as i32), false)
    }
}

struct Frame {
    stopped_before: u64,
    mandatory: u64,
    optional: Vec<u64>,
    next: u128,
    limit: u128,
}

/// Depth-first stream over every stopping time of an information structure.
///
/// At each `t` the stopped set grows to a union of cells that contains the
/// previously stopped leaves; at `t = N` every leaf stops.
pub struct StoppingTimes {
    cell_masks: Vec<Vec<u64>>,
    full: u64,
    num_periods: usize,
    stack: Vec<Frame>,
    tau: Vec<usize>,
}

impl StoppingTimes {
    fn frame(&self, t: usize, stopped_before: u64) -> Frame {
        if t == self.num_periods {
            return Frame {
                stopped_before,
                mandatory: self.full,
                optional: Vec::new(),
                next: 0,
                limit: 1,
            };
        }
        let mut mandatory = 0u64;
        let mut optional = Vec::new();
        for &m in &self.cell_masks[t] {
            if m & stopped_before != 0 {
                mandatory |= m;
            } else {
                optional.push(m);
            }
        }
        let limit = 1u128 << optional.len();
        Frame {
            stopped_before,
            mandatory,
            optional,
            next: 0,
            limit,
        }
    }
}

impl Iterator for StoppingTimes {
    type Item = StoppingTime;

    fn next(&mut self) -> Option<StoppingTime> {
        loop {
            let t = self.stack.len().checked_sub(1)?;
            let frame = self.stack.last_mut().unwrap();
            if frame.next == frame.limit {
                self.stack.pop();
                continue;
            }
            let bits = frame.next;
            frame.next += 1;
            let mut set = frame.mandatory;
            for (i, &m) in frame.optional.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    set |= m;
                }
            }
            let mut newly = set & !frame.stopped_before;
            while newly != 0 {
                let leaf = newly.trailing_zeros() as usize;
                self.tau[leaf] = t;
                newly &= newly - 1;
            }
            if t == self.num_periods {
                return Some(StoppingTime(self.tau.clone()));
            }
            let child = self.frame(t + 1, set);
            self.stack.push(child);
        }
    }
}

/// Streams every stopping time admissible for `info`, each exactly once.
pub fn enumerate_stopping_times(info: &InformationStructure, limits: &EnumerationLimits) -> Result<StoppingTimes> {
    let leaves = info.num_leaves();
    let n = info.num_periods();
    let (estimated, _) = count_stopping_times(info);
    if leaves > limits.max_leaves.min(64) {
        return Err(Error::TooLarge {
            reason: format!("{leaves} leaves exceed the cap of {}", limits.max_leaves.min(64)),
            estimated,
        });
    }
    if n > limits.max_periods {
        return Err(Error::TooLarge {
            reason: format!("{n} periods exceed the cap of {}", limits.max_periods),
            estimated,
        });
    }
    if estimated > limits.max_count {
        return Err(Error::TooLarge {
            reason: format!("count exceeds the cap of {:.3e}", limits.max_count),
            estimated,
        });
    }
    let cell_masks = info
        .partitions()
        .iter()
        .map(|p| {
            p.cells()
                .iter()
                .map(|cell| cell.iter().fold(0u64, |m, &l| m | 1u64 << l))
                .collect()
        })
        .collect();
    let full = if leaves == 64 { u64::MAX } else { (1u64 << leaves) - 1 };
    let mut it = StoppingTimes {
        cell_masks,
        full,
        num_periods: n,
        stack: Vec::with_capacity(n + 1),
        tau: vec![0; leaves],
    };
    let root = it.frame(0, 0);
    it.stack.push(root);
    Ok(it)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Dp,
    BruteForce,
}

/// Optimal value and a maximizing stopping time.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSolution<T> {
    pub value: T,
    pub optimal_tau: StoppingTime,
    /// Value process `V`, adapted to the information structure (DP only).
    pub snell: Option<AdaptedProcess<T>>,
    /// `E[k(t) | H_t]` (DP only).
    pub conditioned_reward: Option<AdaptedProcess<T>>,
    pub method: SolveMethod,
    /// Number of enumerated candidates (brute force only).
    pub num_candidates: Option<u64>,
}

/// Exact maximizer of `E[k(tau)]` by exhaustion. Ties go to the
/// lexicographically smallest `tau`.
pub fn brute_force_optimal<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    limits: &EnumerationLimits,
) -> Result<StoppingSolution<T>> {
    k.check_shape(tree)?;
    check_horizon(tree, info)?;
    let tol = T::validation_tol();
    let mut best: Option<(T, StoppingTime)> = None;
    let mut count = 0u64;
    for tau in enumerate_stopping_times(info, limits)? {
        count += 1;
        let v = expected_reward(tree, k, &tau);
        let replace = match &best {
            None => true,
            Some((bv, btau)) => {
                let scale = T::one().max(bv.abs());
                v > *bv + tol * scale || ((v - *bv).abs() <= tol * scale && tau < *btau)
            }
        };
        if replace {
            best = Some((v, tau));
        }
    }
    let (value, optimal_tau) = best.expect("at least one stopping time exists");
    Ok(StoppingSolution {
        value,
        optimal_tau,
        snell: None,
        conditioned_reward: None,
        method: SolveMethod::BruteForce,
        num_candidates: Some(count),
    })
}

/// Backward induction on `k~(t) = E[k(t) | H_t]` over the cells of a nested
/// information structure. Stops at the first time the conditioned reward
/// reaches the continuation value.
pub fn snell_solve<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
) -> Result<StoppingSolution<T>> {
    k.check_shape(tree)?;
    check_horizon(tree, info)?;
    if !info.is_filtration() {
        return Err(Error::NotFiltration("snell_solve"));
    }
    let n = tree.num_periods();
    let leaves = tree.num_leaves();
    let kt = condition_process(tree, k, info)?;

    let mut rows: Vec<Vec<T>> = vec![Vec::new(); n + 1];
    let mut stop_at = vec![n; leaves];
    rows[n] = kt.slice(n).to_vec();
    for t in (0..n).rev() {
        let cont = cell_average(tree, &rows[t + 1], info.at(t), t)?;
        let reward = kt.slice(t);
        let mut row = Vec::with_capacity(leaves);
        for leaf in 0..leaves {
            if reward[leaf] >= cont[leaf] {
                row.push(reward[leaf]);
                stop_at[leaf] = t;
            } else {
                row.push(cont[leaf]);
            }
        }
        rows[t] = row;
    }
    let snell = AdaptedProcess::from_rows(rows)?.with_certificate(info);
    let value = snell.expectation(tree, 0);
    Ok(StoppingSolution {
        value,
        optimal_tau: StoppingTime(stop_at),
        snell: Some(snell),
        conditioned_reward: Some(kt),
        method: SolveMethod::Dp,
        num_candidates: None,
    })
}

/// Dynamic programming when `info` is nested, exhaustive search otherwise.
pub fn solve<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    limits: &EnumerationLimits,
) -> Result<StoppingSolution<T>> {
    if info.is_filtration() {
        snell_solve(tree, info, k)
    } else {
        brute_force_optimal(tree, info, k, limits)
    }
}

/// `sup_tau E[|k(tau)|]` over the admissible stopping times.
pub fn kappa<T: Real>(
    tree: &ScenarioTree<T>,
    info: &InformationStructure,
    k: &AdaptedProcess<T>,
    limits: &EnumerationLimits,
) -> Result<T> {
    let abs = k.map(|_, _, v| v.abs());
    Ok(solve(tree, info, &abs, limits)?.value)
}

/// Classical full-information Snell value by backward induction over tree
/// nodes. `k` must be adapted to the tree's own filtration.
pub fn node_snell_value<T: Real>(tree: &ScenarioTree<T>, k: &AdaptedProcess<T>) -> Result<T> {
    k.check_shape(tree)?;
    let f = tree.filtration();
    let report = crate::process::check_adapted(k, &f);
    if let Some(v) = report.violation {
        return Err(Error::NotAdapted { t: v.t, cell: v.cell });
    }
    let mut reward = vec![T::zero(); tree.num_nodes()];
    for leaf in 0..tree.num_leaves() {
        for t in 0..=tree.num_periods() {
            reward[tree.ancestor(t, leaf)] = k.at(t, leaf);
        }
    }
    let mut value = vec![T::zero(); tree.num_nodes()];
    for node in (0..tree.num_nodes()).rev() {
        let kids = tree.children(node);
        value[node] = if kids.is_empty() {
            reward[node]
        } else {
            let cont: T = kids.iter().map(|&c| tree.branch_prob(c) * value[c]).sum();
            reward[node].max(cont)
        };
    }
    Ok(value[0])
}

/// Stopping under information delayed by `delta` steps, solved through the
/// full-information problem it reduces to.
///
/// A delayed stopping time is either a deterministic time before `delta` or
/// `alpha + delta` with `alpha` an `F`-stopping time on the horizon
/// `N - delta`. By the tower property its value is `E[h(alpha)]` with the
/// reduced payoff `h(s) = E[k(s + delta) | F_s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedReduction<T> {
    pub delta: usize,
    /// `max(early_value, reduced_value)`.
    pub value: T,
    /// Best deterministic stop before `delta`, as `(t, E[k(t)])`.
    pub early: Option<(usize, T)>,
    /// `sup_alpha E[h(alpha)]`.
    pub reduced_value: T,
    /// Earliest optimal `F`-stopping time for `h`, in `0..=N - delta`.
    pub alpha: StoppingTime,
    /// `h` on the reduced horizon.
    pub reduced_payoff: AdaptedProcess<T>,
}

pub fn delayed_reduction<T: Real>(
    tree: &ScenarioTree<T>,
    k: &AdaptedProcess<T>,
    delta: usize,
) -> Result<DelayedReduction<T>> {
    k.check_shape(tree)?;
    let n = tree.num_periods();
    if delta > n {
        return Err(Error::InvalidParam(format!("delay {delta} exceeds the horizon {n}")));
    }
    let leaves = tree.num_leaves();
    let m = n - delta;
    let parts: Vec<_> = (0..=m).map(|s| tree.ancestor_partition(s)).collect();
    let mut h = Vec::with_capacity((m + 1) * leaves);
    for (s, part) in parts.iter().enumerate() {
        h.extend(cell_average(tree, k.slice(s + delta), part, s)?);
    }
    let h = AdaptedProcess::new(m, leaves, h)?;

    let mut value_row = h.slice(m).to_vec();
    let mut alpha = vec![m; leaves];
    for s in (0..m).rev() {
        let cont = cell_average(tree, &value_row, &parts[s], s)?;
        let reward = h.slice(s);
        for leaf in 0..leaves {
            if reward[leaf] >= cont[leaf] {
                value_row[leaf] = reward[leaf];
                alpha[leaf] = s;
            } else {
                value_row[leaf] = cont[leaf];
            }
        }
    }
    let reduced_value = tree.expectation(&value_row);
    let early =
        (0..delta)
            .map(|t| (t, k.expectation(tree, t)))
            .fold(None, |best: Option<(usize, T)>, (t, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((t, v)),
            });
    let value = match early {
        Some((_, v)) if v >= reduced_value => v,
        _ => reduced_value,
    };
    Ok(DelayedReduction {
        delta,
        value,
        early,
        reduced_value,
        alpha: StoppingTime(alpha),
        reduced_payoff: h,
    })
}

fn check_horizon<T: Real>(tree: &ScenarioTree<T>, info: &InformationStructure) -> Result<()> {
    if info.num_periods() != tree.num_periods() || info.num_leaves() != tree.num_leaves() {
        return Err(Error::Shape(format!(
            "information structure is {}x{}, tree is {}x{}",
            info.num_periods() + 1,
            info.num_leaves(),
            tree.num_periods() + 1,
            tree.num_leaves()
        )));
    }
    Ok(())
}
