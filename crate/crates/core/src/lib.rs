//! Tabular MDP solvers for standard, regularized, stochastic-reward,
//! distributionally robust and constrained Bellman operators, all driven by
//! one value-iteration engine, with checks of the equivalences between them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod constrained;
pub mod distributional;
pub mod equivalence;
pub mod error;
pub mod io;
pub mod model;
pub mod numeric;
pub mod regularized;
pub mod rng;
pub mod solver;
pub mod stochastic;

pub use error::{Error, Result, Violation};
pub use model::{q_vector, random_mdp, validate_model, MdpModel, Policy, ValueFunction};
pub use regularized::{ConjugateOptions, ConjugateResult, Regularizer};
pub use solver::{policy_evaluation_exact, value_iteration, Backup, BackupOperator, SolveOptions, SolveResult};
