//! Generic value iteration over pluggable per-state backups, plus exact
//! policy evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{q_vector, sup_distance, MdpModel, Policy, ValueFunction};

/// Backup value at one state together with the policy row attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backup {
    pub value: f64,
    pub policy: Vec<f64>,
}

/// A per-state Bellman backup `w_s -> (value, policy row)`.
///
/// Implementations must be pure in `(state, w)`: value iteration relies on
/// calling them repeatedly with the same inputs and getting the same output.
pub trait BackupOperator: Sync {
    fn backup(&self, state: usize, w: &[f64]) -> Result<Backup>;

    /// Short label used in reports.
    fn name(&self) -> String {
        "backup".to_string()
    }
}

impl<T: BackupOperator + ?Sized> BackupOperator for &T {
    fn backup(&self, state: usize, w: &[f64]) -> Result<Backup> {
        (**self).backup(state, w)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: BackupOperator + ?Sized> BackupOperator for Box<T> {
    fn backup(&self, state: usize, w: &[f64]) -> Result<Backup> {
        (**self).backup(state, w)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// `max_a w_a`, one-hot at the lowest maximizing index.
pub fn standard_backup(w: &[f64]) -> Backup {
    let best = argmax(w);
    let mut policy = vec![0.0; w.len()];
    policy[best] = 1.0;
    Backup { value: w[best], policy }
}

/// Lowest index attaining the maximum.
pub fn argmax(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in w.iter().enumerate().skip(1) {
        if *x > w[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StandardBackup;

impl BackupOperator for StandardBackup {
    fn backup(&self, _state: usize, w: &[f64]) -> Result<Backup> {
        Ok(standard_backup(w))
    }

    fn name(&self) -> String {
        "standard".into()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub value: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
    pub residual: f64,
}

/// One application of the Bellman operator to every state.
pub fn bellman_sweep(model: &MdpModel, backup: &dyn BackupOperator, value: &[f64]) -> Result<(Vec<f64>, Policy)> {
    let mut next = Vec::with_capacity(model.num_states());
    let mut rows = Vec::with_capacity(model.num_states());
    for s in 0..model.num_states() {
        let w = q_vector(model, value, s)?;
        let b = backup.backup(s, &w)?;
        if b.policy.len() != model.num_actions() {
            return Err(Error::ShapeMismatch(format!(
                "backup returned {} probabilities for {} actions",
                b.policy.len(),
                model.num_actions()
            )));
        }
        next.push(b.value);
        rows.push(b.policy);
    }
    Ok((next, Policy::from_rows(rows)?))
}

/// Fixed-point iteration from `V_0 = 0` until the sup-norm step is within `tol`.
pub fn value_iteration(model: &MdpModel, backup: &dyn BackupOperator, opts: &SolveOptions) -> Result<SolveResult> {
    value_iteration_from(model, backup, opts, &vec![0.0; model.num_states()])
}

/// Same as [`value_iteration`] with an explicit starting point.
pub fn value_iteration_from(
    model: &MdpModel,
    backup: &dyn BackupOperator,
    opts: &SolveOptions,
    start: &[f64],
) -> Result<SolveResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let mut value = start.to_vec();
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let (next, policy) = bellman_sweep(model, backup, &value)?;
        residual = sup_distance(&next, &value);
        value = next;
        if residual <= opts.tol {
            return Ok(SolveResult {
                value: ValueFunction { values: value },
                policy,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual,
    })
}

/// Solves `V = r_pi + gamma P_pi V` with a dense LU factorization.
pub fn policy_evaluation_exact(model: &MdpModel, policy: &Policy) -> Result<ValueFunction> {
    let n = model.num_states();
    if policy.num_states() != n || policy.num_actions() != model.num_actions() {
        return Err(Error::ShapeMismatch(format!(
            "policy is {}x{}, model is {}x{}",
            policy.num_states(),
            policy.num_actions(),
            n,
            model.num_actions()
        )));
    }
    let gamma = model.discount();
    let mut lhs = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (a, p) in policy.row(s).iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            rhs[s] += p * model.reward(s, a);
            for (t, q) in model.transition_row(s, a).iter().enumerate() {
                lhs[(s, t)] -= gamma * p * q;
            }
        }
    }
    let solution = lhs
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular policy evaluation system".into()))?;
    let residual = (&lhs * &solution - &rhs).amax();
    if residual > 1e-8 {
        return Err(Error::Numerical(format!(
            "policy evaluation residual {residual:e} exceeds 1e-8"
        )));
    }
    Ok(ValueFunction {
        values: solution.iter().copied().collect(),
    })
}
