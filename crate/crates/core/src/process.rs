//! Real-valued processes indexed by `(time, leaf)` and conditioning on
//! information structures.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::info::{InformationStructure, Partition};
use crate::scalar::{close, Real};
use crate::tree::ScenarioTree;

/// Values per `(t, leaf)`, stored time-major.
///
/// A process may carry a certificate recording the information structure it
/// was checked against; see [`AdaptedProcess::certify`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess<T> {
    num_periods: usize,
    num_leaves: usize,
    values: Vec<T>,
    certificate: Option<u64>,
}

impl<T: Real> AdaptedProcess<T> {
    pub fn new(num_periods: usize, num_leaves: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != (num_periods + 1) * num_leaves {
            return Err(Error::Shape(format!(
                "{} values for {} periods x {} leaves",
                values.len(),
                num_periods + 1,
                num_leaves
            )));
        }
        Ok(Self {
            num_periods,
            num_leaves,
            values,
            certificate: None,
        })
    }

    /// One row per time index.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Shape("need rows for t = 0..N with N >= 1".into()));
        }
        let num_leaves = rows[0].len();
        if rows.iter().any(|r| r.len() != num_leaves) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        let num_periods = rows.len() - 1;
        Self::new(num_periods, num_leaves, rows.into_iter().flatten().collect())
    }

    pub fn from_fn(num_periods: usize, num_leaves: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity((num_periods + 1) * num_leaves);
        for t in 0..=num_periods {
            for leaf in 0..num_leaves {
                values.push(f(t, leaf));
            }
        }
        Self {
            num_periods,
            num_leaves,
            values,
            certificate: None,
        }
    }

    /// Process shaped like `tree`, with values given per node.
    pub fn from_node_values(tree: &ScenarioTree<T>, node_values: &[T]) -> Result<Self> {
        if node_values.len() != tree.num_nodes() {
            return Err(Error::Shape(format!(
                "{} node values for {} nodes",
                node_values.len(),
                tree.num_nodes()
            )));
        }
        Ok(Self::from_fn(tree.num_periods(), tree.num_leaves(), |t, leaf| {
            node_values[tree.ancestor(t, leaf)]
        }))
    }

    pub fn constant(num_periods: usize, num_leaves: usize, c: T) -> Self {
        Self::from_fn(num_periods, num_leaves, |_, _| c)
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    #[inline]
    pub fn at(&self, t: usize, leaf: usize) -> T {
        self.values[t * self.num_leaves + leaf]
    }

    /// Values at time `t`, one per leaf.
    pub fn slice(&self, t: usize) -> &[T] {
        &self.values[t * self.num_leaves..(t + 1) * self.num_leaves]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks(self.num_leaves)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Pointwise map; drops the certificate.
    pub fn map(&self, mut f: impl FnMut(usize, usize, T) -> T) -> Self {
        Self::from_fn(self.num_periods, self.num_leaves, |t, l| f(t, l, self.at(t, l)))
    }

    /// `E[X(t)]` under the tree's leaf probabilities.
    pub fn expectation(&self, tree: &ScenarioTree<T>, t: usize) -> T {
        tree.expectation(self.slice(t))
    }

    /// Checks adaptedness to `info` and records it.
    pub fn certify(mut self, info: &InformationStructure) -> Result<Self> {
        let report = check_adapted(&self, info);
        if let Some(v) = report.violation {
            return Err(Error::NotAdapted { t: v.t, cell: v.cell });
        }
        self.certificate = Some(info.fingerprint());
        Ok(self)
    }

    /// True iff this process was certified against `info`.
    pub fn is_certified_for(&self, info: &InformationStructure) -> bool {
        self.certificate == Some(info.fingerprint())
    }

    pub(crate) fn check_shape(&self, tree: &ScenarioTree<T>) -> Result<()> {
        if self.num_periods != tree.num_periods() || self.num_leaves != tree.num_leaves() {
            return Err(Error::Shape(format!(
                "process is {}x{}, tree is {}x{}",
                self.num_periods + 1,
                self.num_leaves,
                tree.num_periods() + 1,
                tree.num_leaves()
            )));
        }
        Ok(())
    }

    pub(crate) fn with_certificate(mut self, info: &InformationStructure) -> Self {
        self.certificate = Some(info.fingerprint());
        self
    }
}

/// Probability-weighted average of `values` over each cell of `partition`,
/// written back per leaf.
pub fn cell_average<T: Real>(tree: &ScenarioTree<T>, values: &[T], partition: &Partition, t: usize) -> Result<Vec<T>> {
    let probs = tree.leaf_prob();
    if values.len() != probs.len() || partition.num_leaves() != probs.len() {
        return Err(Error::Shape("values, partition and tree disagree on leaf count".into()));
    }
    let mut out = vec![T::zero(); values.len()];
    for (c, cell) in partition.cells().iter().enumerate() {
        let mass: T = cell.iter().map(|&l| probs[l]).sum();
        if !(mass > T::zero()) {
            return Err(Error::DegenerateCell { t, cell: c });
        }
        let avg = cell.iter().map(|&l| probs[l] * values[l]).sum::<T>() / mass;
        for &l in cell {
            out[l] = avg;
        }
    }
    Ok(out)
}

/// `E[X(t) | H_t]` evaluated per leaf.
pub fn conditional_expectation<T: Real>(
    tree: &ScenarioTree<T>,
    process: &AdaptedProcess<T>,
    info: &InformationStructure,
    t: usize,
) -> Result<Vec<T>> {
    process.check_shape(tree)?;
    if info.num_periods() != tree.num_periods() {
        return Err(Error::Shape("information structure and tree horizons differ".into()));
    }
    cell_average(tree, process.slice(t), info.at(t), t)
}

/// `t -> E[X(t) | H_t]` for every `t`, certified adapted to `info`.
pub fn condition_process<T: Real>(
    tree: &ScenarioTree<T>,
    process: &AdaptedProcess<T>,
    info: &InformationStructure,
) -> Result<AdaptedProcess<T>> {
    let mut values = Vec::with_capacity((tree.num_periods() + 1) * tree.num_leaves());
    for t in 0..=tree.num_periods() {
        values.extend(conditional_expectation(tree, process, info, t)?);
    }
    Ok(AdaptedProcess::new(tree.num_periods(), tree.num_leaves(), values)?.with_certificate(info))
}

/// First place where a process fails to be constant on a cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptednessViolation {
    pub t: usize,
    pub cell: usize,
    pub leaves: (usize, usize),
    pub values: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptednessReport {
    pub adapted: bool,
    pub violation: Option<AdaptednessViolation>,
}

/// Checks that `process(t, ·)` is constant on every cell of `info` at `t`.
///
/// Equal values (including equal infinities) always pass; otherwise the
/// difference must stay within the scalar's validation tolerance.
pub fn check_adapted<T: Real>(process: &AdaptedProcess<T>, info: &InformationStructure) -> AdaptednessReport {
    let tol = T::validation_tol();
    if process.num_periods() != info.num_periods() || process.num_leaves() != info.num_leaves() {
        return AdaptednessReport {
            adapted: false,
            violation: Some(AdaptednessViolation {
                t: 0,
                cell: 0,
                leaves: (0, 0),
                values: (f64::NAN, f64::NAN),
            }),
        };
    }
    for t in 0..=process.num_periods() {
        let row = process.slice(t);
        for (c, cell) in info.at(t).cells().iter().enumerate() {
            let first = cell[0];
            if let Some(&other) = cell.iter().find(|&&l| !close(row[l], row[first], tol)) {
                return AdaptednessReport {
                    adapted: false,
                    violation: Some(AdaptednessViolation {
                        t,
                        cell: c,
                        leaves: (first, other),
                        values: (row[first].as_f64(), row[other].as_f64()),
                    }),
                };
            }
        }
    }
    AdaptednessReport {
        adapted: true,
        violation: None,
    }
}
