//! Information structures: one partition of the leaf set per time index.
//!
//! Nothing forces the partitions to be nested, so a structure can model
//! delayed, advanced or otherwise unrelated observation flows. Whether the
//! sequence is nested (a filtration) is computed once at construction.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Partition of the leaves `0..n` into nonempty cells.
///
/// Canonical form: cells are ordered by their smallest leaf and the leaves
/// inside a cell are sorted, so two equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    cell_of: Vec<usize>,
    cells: Vec<Vec<usize>>,
}

impl Partition {
    /// Groups leaves carrying the same label.
    pub fn from_labels<L: Hash + Eq + Copy>(labels: &[L]) -> Self {
        let mut seen: HashMap<L, usize> = HashMap::new();
        let mut cell_of = Vec::with_capacity(labels.len());
        let mut cells: Vec<Vec<usize>> = Vec::new();
        for (leaf, label) in labels.iter().enumerate() {
            let idx = *seen.entry(*label).or_insert_with(|| {
                cells.push(Vec::new());
                cells.len() - 1
            });
            cell_of.push(idx);
            cells[idx].push(leaf);
        }
        Self { cell_of, cells }
    }

    /// Validates explicit cells: disjoint, nonempty, covering `0..num_leaves`.
    pub fn from_cells(num_leaves: usize, cells: &[Vec<usize>]) -> Result<Self> {
        let mut labels = vec![usize::MAX; num_leaves];
        for (c, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::InvalidInfo(format!("cell {c} is empty")));
            }
            for &leaf in cell {
                if leaf >= num_leaves {
                    return Err(Error::InvalidInfo(format!("leaf {leaf} out of range")));
                }
                if labels[leaf] != usize::MAX {
                    return Err(Error::InvalidInfo(format!("leaf {leaf} appears in two cells")));
                }
                labels[leaf] = c;
            }
        }
        if let Some(leaf) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(Error::InvalidInfo(format!("leaf {leaf} is not covered")));
        }
        Ok(Self::from_labels(&labels))
    }

    /// Single cell holding every leaf.
    pub fn trivial(num_leaves: usize) -> Self {
        Self::from_labels(&vec![0u8; num_leaves])
    }

    /// One cell per leaf.
    pub fn discrete(num_leaves: usize) -> Self {
        Self::from_labels(&(0..num_leaves).collect::<Vec<_>>())
    }

    pub fn num_leaves(&self) -> usize {
        self.cell_of.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn cell(&self, idx: usize) -> &[usize] {
        &self.cells[idx]
    }

    pub fn cell_of(&self, leaf: usize) -> usize {
        self.cell_of[leaf]
    }

    pub fn labels(&self) -> &[usize] {
        &self.cell_of
    }

    /// True iff every cell of `self` lies inside a single cell of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.num_leaves() == coarser.num_leaves()
            && self.cells.iter().all(|cell| {
                let c = coarser.cell_of[cell[0]];
                cell.iter().all(|&l| coarser.cell_of[l] == c)
            })
    }

    /// First cell split by the leaf set `member`; `None` when the set is a
    /// union of cells.
    pub fn first_split_cell(&self, member: impl Fn(usize) -> bool) -> Option<usize> {
        self.cells.iter().position(|cell| {
            let first = member(cell[0]);
            cell.iter().any(|&l| member(l) != first)
        })
    }
}

/// One partition of the leaf set per time index `0..=N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InformationStructure {
    partitions: Vec<Partition>,
    is_filtration: bool,
    fingerprint: u64,
}

impl InformationStructure {
    pub fn new(partitions: Vec<Partition>) -> Result<Self> {
        if partitions.len() < 2 {
            return Err(Error::InvalidInfo("need partitions for t = 0..N with N >= 1".into()));
        }
        let n = partitions[0].num_leaves();
        if let Some(t) = partitions.iter().position(|p| p.num_leaves() != n) {
            return Err(Error::InvalidInfo(format!(
                "partition at t={t} covers {} leaves, expected {n}",
                partitions[t].num_leaves()
            )));
        }
        let is_filtration = partitions.windows(2).all(|w| w[1].refines(&w[0]));
        let fingerprint = fingerprint(&partitions);
        Ok(Self {
            partitions,
            is_filtration,
            fingerprint,
        })
    }

    /// Builds a structure from explicit cell lists, one list per time index.
    pub fn from_cells(num_leaves: usize, cells: &[Vec<Vec<usize>>]) -> Result<Self> {
        let parts = cells
            .iter()
            .map(|c| Partition::from_cells(num_leaves, c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts)
    }

    /// No information at any time.
    pub fn trivial(num_leaves: usize, num_periods: usize) -> Self {
        Self::new(vec![Partition::trivial(num_leaves); num_periods + 1]).expect("valid")
    }

    /// Full information about the leaf at every time.
    pub fn discrete(num_leaves: usize, num_periods: usize) -> Self {
        Self::new(vec![Partition::discrete(num_leaves); num_periods + 1]).expect("valid")
    }

    pub fn num_periods(&self) -> usize {
        self.partitions.len() - 1
    }

    pub fn num_leaves(&self) -> usize {
        self.partitions[0].num_leaves()
    }

    pub fn at(&self, t: usize) -> &Partition {
        &self.partitions[t]
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    /// True iff the partition at `t + 1` refines the one at `t` for all `t`.
    pub fn is_filtration(&self) -> bool {
        self.is_filtration
    }

    /// True iff `other` refines `self` at every time index (`self_t ⊆ other_t`
    /// as sigma-algebras).
    pub fn is_coarser_than(&self, other: &InformationStructure) -> bool {
        self.partitions.len() == other.partitions.len()
            && self
                .partitions
                .iter()
                .zip(&other.partitions)
                .all(|(mine, theirs)| theirs.refines(mine))
    }

    /// Stable 64-bit digest of the cell labels, used to certify processes.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

// FNV-1a over the canonical labels; stable across platforms and releases.
fn fingerprint(partitions: &[Partition]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(partitions.len() as u64);
    for p in partitions {
        eat(p.num_leaves() as u64);
        for &l in p.labels() {
            eat(l as u64);
        }
    }
    h
}
