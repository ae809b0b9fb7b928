//! JSON formats for trees, information structures, controls and solver
//! reports.
//!
//! Tree file:
//!
//! ```json
//! {
//!   "num_periods": 2,
//!   "step": 0.5,
//!   "nodes": [null, 0, 0, 1, 1, 2, 2],
//!   "branch_prob": [1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
//!   "info": [[[0, 1, 2, 3]], [[0, 1, 2, 3]], [[0, 1], [2, 3]]],
//!   "reward": [[0.0, 0.0, 0.0, 0.0], [2.0, 2.0, 0.0, 0.0], [3.0, 1.0, 1.0, 0.0]]
//! }
//! ```
//!
//! `nodes[i]` is the parent of node `i` (`null` for the root). `info` lists
//! the cells of each partition by leaf number, where leaves are numbered in
//! node order; `reward` has one row per time. Both are optional. Saving
//! writes cells in canonical order, so a saved file reloads and saves to the
//! same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controls::{ControlClass, RandomizedControl, SingularControl};
use crate::error::{Error, Result};
use crate::info::InformationStructure;
use crate::process::AdaptedProcess;
use crate::scalar::Real;
use crate::stopping::{count_stopping_times, SolveMethod, StoppingSolution, StoppingTime};
use crate::tree::ScenarioTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub num_periods: usize,
    pub step: f64,
    pub nodes: Vec<Option<usize>>,
    pub branch_prob: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<Vec<Vec<Vec<usize>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Vec<Vec<f64>>>,
}

/// Contents of a [`TreeFile`] after validation.
#[derive(Debug, Clone)]
pub struct LoadedTree<T> {
    pub tree: ScenarioTree<T>,
    pub info: Option<InformationStructure>,
    pub reward: Option<AdaptedProcess<T>>,
}

impl TreeFile {
    pub fn from_parts<T: Real>(
        tree: &ScenarioTree<T>,
        info: Option<&InformationStructure>,
        reward: Option<&AdaptedProcess<T>>,
    ) -> Self {
        Self {
            num_periods: tree.num_periods(),
            step: tree.step().as_f64(),
            nodes: tree.parents().to_vec(),
            branch_prob: tree.branch_probs().iter().map(|p| p.as_f64()).collect(),
            info: info.map(|i| i.partitions().iter().map(|p| p.cells().to_vec()).collect()),
            reward: reward.map(|k| k.rows().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()),
        }
    }

    pub fn load<T: Real>(&self) -> Result<LoadedTree<T>> {
        let tree = ScenarioTree::new(
            self.num_periods,
            T::lit(self.step),
            self.nodes.clone(),
            self.branch_prob.iter().map(|&p| T::lit(p)).collect(),
        )?;
        let info = match &self.info {
            Some(cells) => {
                let info = InformationStructure::from_cells(tree.num_leaves(), cells)?;
                if info.num_periods() != tree.num_periods() {
                    return Err(Error::Shape("info must list one partition per time 0..=N".into()));
                }
                Some(info)
            }
            None => None,
        };
        let reward = match &self.reward {
            Some(rows) => {
                let k =
                    AdaptedProcess::from_rows(rows.iter().map(|r| r.iter().map(|&v| T::lit(v)).collect()).collect())?;
                k.check_shape(&tree)?;
                Some(k)
            }
            None => None,
        };
        Ok(LoadedTree { tree, info, reward })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }
}

/// JSON number, or `"inf"` for `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtReal {
    Finite(f64),
    Special(SpecialValue),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecialValue {
    #[serde(rename = "inf")]
    Inf,
}

impl ExtReal {
    pub fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            ExtReal::Special(SpecialValue::Inf)
        } else {
            ExtReal::Finite(x)
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(x) => x,
            ExtReal::Special(SpecialValue::Inf) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlKind {
    G,
    #[serde(rename = "xi")]
    Xi,
}

/// `{"kind": "G" | "xi", "values": [[...] per t], "class": "strict" | "extended"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlDump {
    pub kind: ControlKind,
    pub values: Vec<Vec<ExtReal>>,
    pub class: ControlClass,
}

fn dump_rows<T: Real>(p: &AdaptedProcess<T>) -> Vec<Vec<ExtReal>> {
    p.rows()
        .map(|r| r.iter().map(|v| ExtReal::from_f64(v.as_f64())).collect())
        .collect()
}

fn undump_rows<T: Real>(rows: &[Vec<ExtReal>]) -> Vec<Vec<T>> {
    rows.iter()
        .map(|r| {
            r.iter()
                .map(|v| {
                    let x = v.to_f64();
                    if x == f64::INFINITY {
                        T::infinity()
                    } else {
                        T::lit(x)
                    }
                })
                .collect()
        })
        .collect()
}

impl ControlDump {
    pub fn randomized<T: Real>(g: &RandomizedControl<T>) -> Self {
        Self {
            kind: ControlKind::G,
            values: dump_rows(g.values()),
            class: g.class(),
        }
    }

    pub fn singular<T: Real>(xi: &SingularControl<T>) -> Self {
        Self {
            kind: ControlKind::Xi,
            values: dump_rows(xi.values()),
            class: xi.class(),
        }
    }

    pub fn to_randomized<T: Real>(&self) -> Result<RandomizedControl<T>> {
        if self.kind != ControlKind::G {
            return Err(Error::InvalidParam("dump holds a singular control".into()));
        }
        RandomizedControl::from_rows(undump_rows(&self.values))
    }

    pub fn to_singular<T: Real>(&self) -> Result<SingularControl<T>> {
        if self.kind != ControlKind::Xi {
            return Err(Error::InvalidParam("dump holds a randomized control".into()));
        }
        SingularControl::from_rows(undump_rows(&self.values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_stopping_times: Option<f64>,
}

/// `{value, method, tau, snell, diagnostics: {kappa, num_stopping_times?}}`
/// where `snell[t]` holds one value per cell of the partition at `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    pub value: f64,
    pub method: SolveMethod,
    pub tau: StoppingTime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snell: Option<Vec<Vec<f64>>>,
    pub diagnostics: SolverDiagnostics,
}

impl SolverReport {
    pub fn new<T: Real>(info: &InformationStructure, sol: &StoppingSolution<T>, kappa: T) -> Self {
        let snell = sol.snell.as_ref().map(|v| {
            info.partitions()
                .iter()
                .enumerate()
                .map(|(t, p)| p.cells().iter().map(|c| v.at(t, c[0]).as_f64()).collect())
                .collect()
        });
        let (count, exact) = count_stopping_times(info);
        Self {
            value: sol.value.as_f64(),
            method: sol.method,
            tau: sol.optimal_tau.clone(),
            snell,
            diagnostics: SolverDiagnostics {
                kappa: kappa.as_f64(),
                num_stopping_times: exact.then_some(count),
            },
        }
    }
}
