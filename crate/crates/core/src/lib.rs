//! Optimal stopping on finite scenario trees under general information flows.
//!
//! The sample space is the leaf set of a [`ScenarioTree`]; an
//! [`InformationStructure`] assigns a partition of it to every time, nested
//! or not. On top of that the crate solves the stopping problem
//! `sup_tau E[k(tau)]`, its randomized relaxation `sup_G E[sum k dG]` and its
//! singular-control form `sup_xi E[sum k e^{-xi} dxi]`, maps optimizers
//! between the three, and checks first-order optimality conditions.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controls;
pub mod error;
pub mod info;
pub mod io;
pub mod model;
pub mod process;
pub mod scalar;
pub mod stopping;
pub mod tree;
pub mod vi;

pub use controls::{
    g_from_tau, g_from_xi, optimize_randomized, optimize_singular, randomized_value, singular_value, tau_from_g,
    xi_from_g, ControlClass, RandomizedControl, SingularControl,
};
pub use error::{Error, Result};
pub use info::{InformationStructure, Partition};
pub use model::{gbm_lattice, lagged_information, random_tree, GbmParams, LagSpec};
pub use process::{check_adapted, condition_process, conditional_expectation, AdaptedProcess};
pub use scalar::Real;
pub use stopping::{
    brute_force_optimal, delayed_reduction, enumerate_stopping_times, snell_solve, solve, value_of, EnumerationLimits,
    StoppingSolution, StoppingTime,
};
pub use tree::ScenarioTree;
pub use vi::{vi_check, Perturbation, ViReport};

pub type Tree = ScenarioTree<f64>;
pub type Process = AdaptedProcess<f64>;
pub type Solution = StoppingSolution<f64>;
pub type GControl = RandomizedControl<f64>;
pub type XiControl = SingularControl<f64>;
pub type Gbm = GbmParams<f64>;

pub type Tree32 = ScenarioTree<f32>;
pub type Process32 = AdaptedProcess<f32>;
