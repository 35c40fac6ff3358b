//! Tabular model, policy and value containers shared by every framework.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::rng::stream_rng;

const TRANSITION_SUM_TOL: f64 = 1e-12;
const POLICY_SUM_TOL: f64 = 1e-10;

/// A finite MDP `(S, A, q, r, gamma)` with dense storage.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    num_states: usize,
    num_actions: usize,
    /// Flattened `[s][a][s']`.
    transition: Vec<f64>,
    /// Flattened `[s][a]`.
    reward: Vec<f64>,
    discount: f64,
}

impl MdpModel {
    /// Builds a model and rejects it if any invariant fails.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let model = Self::new_unchecked(num_states, num_actions, transition, reward, discount)?;
        let violations = validate_model(&model);
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(violations))
        }
    }

    /// Builds a model checking only the buffer shapes. Use [`validate_model`]
    /// to inspect the remaining invariants.
    pub fn new_unchecked(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::ShapeMismatch(
                "num_states and num_actions must be positive".into(),
            ));
        }
        let sa = num_states * num_actions;
        if transition.len() != sa * num_states {
            return Err(Error::ShapeMismatch(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                sa * num_states
            )));
        }
        if reward.len() != sa {
            return Err(Error::ShapeMismatch(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                sa
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            discount,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `q(. | s, a)` as a slice over next states.
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.num_actions + action) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.num_actions + action]
    }

    /// Reward row `r(. | s)`.
    pub fn reward_row(&self, state: usize) -> &[f64] {
        let start = state * self.num_actions;
        &self.reward[start..start + self.num_actions]
    }

    /// Flattened `[s][a]` rewards.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Flattened `[s][a][s']` transitions.
    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    /// Same tuple `(S, A, q, gamma)` with a different reward matrix.
    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            reward,
            self.discount,
        )
    }

    /// True when both models share `(S, A, q, gamma)` exactly.
    pub fn same_tuple(&self, other: &MdpModel) -> bool {
        self.num_states == other.num_states
            && self.num_actions == other.num_actions
            && self.discount == other.discount
            && self.transition == other.transition
    }
}

/// Lists every failed invariant; an empty list means the model is valid.
pub fn validate_model(model: &MdpModel) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(0.0..1.0).contains(&model.discount) {
        out.push(Violation::global(format!(
            "discount not < 1 or negative (got {})",
            model.discount
        )));
    }
    for s in 0..model.num_states {
        for a in 0..model.num_actions {
            let row = model.transition_row(s, a);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                out.push(Violation::at(s, a, "transition entry negative or non-finite"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > TRANSITION_SUM_TOL {
                out.push(Violation::at(s, a, format!("transition row sums to {sum}, not 1")));
            }
            if !model.reward(s, a).is_finite() {
                out.push(Violation::at(s, a, "reward not finite"));
            }
        }
    }
    out
}

/// Lookahead vector `w_s(a) = r(a|s) + gamma * sum_s' q(s'|s,a) V(s')`.
pub fn q_vector(model: &MdpModel, value: &[f64], state: usize) -> Result<Vec<f64>> {
    if state >= model.num_states {
        return Err(Error::IndexOutOfRange {
            index: state,
            len: model.num_states,
        });
    }
    if value.len() != model.num_states {
        return Err(Error::ShapeMismatch(format!(
            "value has {} entries, model has {} states",
            value.len(),
            model.num_states
        )));
    }
    Ok((0..model.num_actions)
        .map(|a| {
            let next: f64 = model
                .transition_row(state, a)
                .iter()
                .zip(value)
                .map(|(q, v)| q * v)
                .sum();
            model.reward(state, a) + model.discount * next
        })
        .collect())
}

/// Row-stochastic table `pi(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_actions = rows.first().map(Vec::len).unwrap_or(0);
        if num_actions == 0 || rows.iter().any(|r| r.len() != num_actions) {
            return Err(Error::ShapeMismatch(
                "policy rows must be non-empty and equal length".into(),
            ));
        }
        let policy = Self {
            num_actions,
            probs: rows.into_iter().flatten().collect(),
        };
        policy.check()?;
        Ok(policy)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.num_actions)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Largest entrywise difference between two policies of the same shape.
    pub fn sup_gap(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check(&self) -> Result<()> {
        for (s, row) in self.rows().enumerate() {
            if !is_probability_row(row, POLICY_SUM_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "policy row {s} is not a probability vector"
                )));
            }
        }
        Ok(())
    }
}

/// Nonnegative entries summing to one within `tol`.
pub fn is_probability_row(row: &[f64], tol: f64) -> bool {
    !row.is_empty() && row.iter().all(|p| p.is_finite() && *p >= -tol) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// State values `V(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(num_states: usize) -> Self {
        Self {
            values: vec![0.0; num_states],
        }
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random model with Dirichlet(1) transition rows and uniform rewards.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    discount: f64,
    reward_range: (f64, f64),
    seed: u64,
) -> Result<MdpModel> {
    let (lo, hi) = reward_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "reward range [{lo}, {hi}] must be finite and ordered"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        let raw: Vec<f64> = (0..num_states)
            .map(|_| {
                let x: f64 = Exp1.sample(&mut rng);
                x + f64::MIN_POSITIVE
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
        // absorb rounding so rows sum to one within the validation tolerance
        let drift = 1.0 - row.iter().sum::<f64>();
        let last = row.len() - 1;
        row[last] = (row[last] + drift).max(0.0);
        transition.extend(row);
    }
    let reward = if lo == hi {
        vec![lo; num_states * num_actions]
    } else {
        let dist = Uniform::new(lo, hi).expect("ordered finite range");
        (0..num_states * num_actions).map(|_| rng.sample(dist)).collect()
    };
    MdpModel::new(num_states, num_actions, transition, reward, discount)
}
