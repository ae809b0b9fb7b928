//! Finite scenario trees.
//!
//! The sample space is the leaf set. The reference filtration `F_t` groups
//! leaves by their ancestor at time `t`, and the probability of a leaf is the
//! product of the branch probabilities on its path from the root.

use crate::error::{Error, Result};
use crate::info::{InformationStructure, Partition};
use crate::scalar::{close, Real};

/// Rooted tree with uniform time levels `0..=N`.
///
/// Nodes are identified by their index. Parents always carry a smaller index
/// than their children, node `0` is the root and every leaf sits at time `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree<T> {
    num_periods: usize,
    step: T,
    parent: Vec<Option<usize>>,
    branch_prob: Vec<T>,
    time: Vec<usize>,
    children: Vec<Vec<usize>>,
    levels: Vec<Vec<usize>>,
    leaves: Vec<usize>,
    leaf_prob: Vec<T>,
    // ancestors[t][leaf] = node at time t on the path to `leaf`
    ancestors: Vec<Vec<usize>>,
}

impl<T: Real> ScenarioTree<T> {
    /// Builds a tree from parent links and branch probabilities.
    ///
    /// `branch_prob[0]` belongs to the root and must be `1`. `step` is the
    /// physical length `h = T / N` of one period.
    pub fn new(num_periods: usize, step: T, parent: Vec<Option<usize>>, branch_prob: Vec<T>) -> Result<Self> {
        let tol = T::validation_tol();
        if num_periods == 0 {
            return Err(Error::InvalidTree("num_periods must be >= 1".into()));
        }
        if !(step > T::zero()) || !step.is_finite() {
            return Err(Error::InvalidTree(format!("step must be positive, got {step}")));
        }
        let n = parent.len();
        if n == 0 {
            return Err(Error::InvalidTree("tree has no nodes".into()));
        }
        if branch_prob.len() != n {
            return Err(Error::InvalidTree(format!(
                "{} nodes but {} branch probabilities",
                n,
                branch_prob.len()
            )));
        }
        if parent[0].is_some() {
            return Err(Error::InvalidTree("node 0 must be the root".into()));
        }
        if !close(branch_prob[0], T::one(), tol) {
            return Err(Error::InvalidTree("root branch probability must be 1".into()));
        }

        let mut time = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for (id, p) in parent.iter().enumerate().skip(1) {
            let p = p.ok_or_else(|| Error::InvalidTree(format!("node {id} has no parent")))?;
            if p >= id {
                return Err(Error::InvalidTree(format!(
                    "node {id} has parent {p}; parents must precede children"
                )));
            }
            let q = branch_prob[id];
            if !(q > T::zero() && q <= T::one() + tol) {
                return Err(Error::InvalidTree(format!(
                    "branch probability of node {id} is {q}, expected (0, 1]"
                )));
            }
            time[id] = time[p] + 1;
            if time[id] > num_periods {
                return Err(Error::InvalidTree(format!(
                    "node {id} sits at time {} beyond the horizon {num_periods}",
                    time[id]
                )));
            }
            children[p].push(id);
        }

        let mut levels = vec![Vec::new(); num_periods + 1];
        for id in 0..n {
            levels[time[id]].push(id);
            if children[id].is_empty() && time[id] != num_periods {
                return Err(Error::InvalidTree(format!(
                    "node {id} at time {} has no children",
                    time[id]
                )));
            }
            if !children[id].is_empty() {
                let total: T = children[id].iter().map(|&c| branch_prob[c]).sum();
                if !close(total, T::one(), tol) {
                    return Err(Error::InvalidTree(format!(
                        "branch probabilities out of node {id} sum to {total}"
                    )));
                }
            }
        }

        let leaves = levels[num_periods].clone();
        let mut node_prob = vec![T::one(); n];
        for id in 1..n {
            node_prob[id] = node_prob[parent[id].unwrap()] * branch_prob[id];
        }
        let leaf_prob: Vec<T> = leaves.iter().map(|&l| node_prob[l]).collect();
        let total: T = leaf_prob.iter().copied().sum();
        if !close(total, T::one(), tol) {
            return Err(Error::InvalidTree(format!("leaf probabilities sum to {total}")));
        }

        let mut ancestors = vec![vec![0usize; leaves.len()]; num_periods + 1];
        for (li, &leaf) in leaves.iter().enumerate() {
            let mut node = leaf;
            for t in (0..=num_periods).rev() {
                ancestors[t][li] = node;
                if let Some(p) = parent[node] {
                    node = p;
                }
            }
        }

        Ok(Self {
            num_periods,
            step,
            parent,
            branch_prob,
            time,
            children,
            levels,
            leaves,
            leaf_prob,
            ancestors,
        })
    }

    /// Tree where every node at time `t` has `branching[t]` equally likely
    /// children.
    pub fn uniform(step: T, branching: &[usize]) -> Result<Self> {
        if branching.contains(&0) {
            return Err(Error::InvalidTree("branching factors must be >= 1".into()));
        }
        let mut parent = vec![None];
        let mut prob = vec![T::one()];
        let mut frontier = vec![0usize];
        for &b in branching {
            let mut next = Vec::with_capacity(frontier.len() * b);
            let q = T::one() / T::lit(b as f64);
            for &node in &frontier {
                for _ in 0..b {
                    next.push(parent.len());
                    parent.push(Some(node));
                    prob.push(q);
                }
            }
            frontier = next;
        }
        Self::new(branching.len(), step, parent, prob)
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    /// Physical length of one period.
    pub fn step(&self) -> T {
        self.step
    }

    /// Physical time `t_i = i * h`.
    pub fn time_at(&self, t: usize) -> T {
        T::lit(t as f64) * self.step
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_prob(&self) -> &[T] {
        &self.leaf_prob
    }

    /// Node id of leaf number `leaf`.
    pub fn leaf_node(&self, leaf: usize) -> usize {
        self.leaves[leaf]
    }

    /// Node at time `t` on the path to `leaf`.
    pub fn ancestor(&self, t: usize, leaf: usize) -> usize {
        self.ancestors[t][leaf]
    }

    pub fn nodes_at(&self, t: usize) -> &[usize] {
        &self.levels[t]
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn branch_prob(&self, node: usize) -> T {
        self.branch_prob[node]
    }

    pub fn branch_probs(&self) -> &[T] {
        &self.branch_prob
    }

    pub fn time_of(&self, node: usize) -> usize {
        self.time[node]
    }

    /// `E[f(leaf)]` under the leaf probabilities.
    pub fn expectation(&self, values: &[T]) -> T {
        debug_assert_eq!(values.len(), self.num_leaves());
        self.leaf_prob.iter().zip(values).map(|(&p, &v)| p * v).sum()
    }

    /// Partition of the leaves at time `t` by ancestor (`F_t`).
    pub fn ancestor_partition(&self, t: usize) -> Partition {
        Partition::from_labels(&self.ancestors[t])
    }

    /// The reference filtration `F`.
    pub fn filtration(&self) -> InformationStructure {
        let parts = (0..=self.num_periods).map(|t| self.ancestor_partition(t)).collect();
        InformationStructure::new(parts).expect("ancestor partitions are valid")
    }

    /// Converts the branch probabilities and step to another scalar type.
    pub fn cast<U: Real>(&self) -> Result<ScenarioTree<U>> {
        ScenarioTree::new(
            self.num_periods,
            U::lit(self.step.as_f64()),
            self.parent.clone(),
            self.branch_prob.iter().map(|p| U::lit(p.as_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2() -> ScenarioTree<f64> {
        ScenarioTree::uniform(0.5, &[2, 2]).unwrap()
    }

    #[test]
    fn uniform_binary_tree_layout() {
        let tree = t2();
        assert_eq!(tree.num_nodes(), 7);
        assert_eq!(tree.num_leaves(), 4);
        assert_eq!(tree.nodes_at(1), &[1, 2]);
        assert_eq!(tree.ancestor(1, 1), 1);
        assert_eq!(tree.ancestor(1, 2), 2);
        assert!(tree.leaf_prob().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn rejects_bad_branch_sums() {
        let err = ScenarioTree::new(1, 1.0, vec![None, Some(0), Some(0)], vec![1.0, 0.5, 0.4]);
        assert!(matches!(err, Err(Error::InvalidTree(_))));
    }

    #[test]
    fn rejects_zero_probability_branch() {
        let err = ScenarioTree::new(1, 1.0, vec![None, Some(0), Some(0)], vec![1.0, 1.0, 0.0]);
        assert!(matches!(err, Err(Error::InvalidTree(_))));
    }

    #[test]
    fn rejects_short_paths() {
        // node 2 is a leaf at time 1 while the horizon is 2
        let err = ScenarioTree::new(2, 1.0, vec![None, Some(0), Some(0), Some(1)], vec![1.0, 0.5, 0.5, 1.0]);
        assert!(matches!(err, Err(Error::InvalidTree(_))));
    }

    #[test]
    fn filtration_is_nested() {
        let tree = ScenarioTree::<f64>::uniform(1.0, &[3, 1, 2]).unwrap();
        let f = tree.filtration();
        assert!(f.is_filtration());
        assert_eq!(f.at(0).num_cells(), 1);
        assert_eq!(f.at(3).num_cells(), 6);
    }
}
