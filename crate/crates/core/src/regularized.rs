//! Regularized Bellman backups `max_{pi in simplex} w.pi + phi(pi)`.
//!
//! Entropy and KL regularizers have closed forms (log-sum-exp / softmax).
//! Anything else goes through [`numeric_conjugate`], an entropic mirror-ascent
//! solver that keeps its iterates in the simplex interior.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{dot, max_of, weighted_logsumexp, weighted_softmax};
use crate::solver::{standard_backup, Backup, BackupOperator};

/// Conjugate value `phi*(w)` and the maximizing policy row.
pub type ConjugateResult = Backup;

/// A concave function on the action simplex.
pub trait Regularizer: fmt::Debug + Send + Sync {
    fn value(&self, pi: &[f64]) -> f64;

    /// Gradient on the simplex interior. Only differences between entries
    /// matter to the solvers, so implementations may return any
    /// representative of the gradient modulo the all-ones direction.
    fn gradient(&self, pi: &[f64]) -> Vec<f64>;

    /// Closed-form `(phi*(w), argmax)` when one is known.
    fn closed_form(&self, _w: &[f64]) -> Option<ConjugateResult> {
        None
    }

    /// `Some(form)` when `phi(pi) = constant - eta KL(pi || reference)` on
    /// the `num_actions`-simplex.
    fn kl_form(&self, _num_actions: usize) -> Option<KlForm> {
        None
    }

    fn name(&self) -> String;
}

/// `phi(pi) = constant - eta KL(pi || reference)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlForm {
    pub eta: f64,
    pub reference: Vec<f64>,
    pub constant: f64,
}

impl<T: Regularizer + ?Sized> Regularizer for Arc<T> {
    fn value(&self, pi: &[f64]) -> f64 {
        (**self).value(pi)
    }
    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        (**self).gradient(pi)
    }
    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        (**self).closed_form(w)
    }
    fn kl_form(&self, num_actions: usize) -> Option<KlForm> {
        (**self).kl_form(num_actions)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: Regularizer + ?Sized> Regularizer for &T {
    fn value(&self, pi: &[f64]) -> f64 {
        (**self).value(pi)
    }
    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        (**self).gradient(pi)
    }
    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        (**self).closed_form(w)
    }
    fn kl_form(&self, num_actions: usize) -> Option<KlForm> {
        (**self).kl_form(num_actions)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// `phi(pi) = -eta sum_a pi_a ln pi_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyRegularizer {
    eta: f64,
}

impl EntropyRegularizer {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("entropy eta must be > 0, got {eta}")));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl Regularizer for EntropyRegularizer {
    fn value(&self, pi: &[f64]) -> f64 {
        -self.eta * pi.iter().map(|p| xlogx(*p)).sum::<f64>()
    }

    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        pi.iter().map(|p| -self.eta * (p.ln() + 1.0)).collect()
    }

    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        Some(entropy_backup(w, self.eta))
    }

    fn kl_form(&self, num_actions: usize) -> Option<KlForm> {
        Some(KlForm {
            eta: self.eta,
            reference: vec![1.0 / num_actions as f64; num_actions],
            constant: self.eta * (num_actions as f64).ln(),
        })
    }

    fn name(&self) -> String {
        format!("entropy(eta={})", self.eta)
    }
}

/// Floor applied to reference policies before normalisation.
pub const REFERENCE_FLOOR: f64 = 1e-12;

/// Clamps entries to [`REFERENCE_FLOOR`] and renormalises. Rejects rows that
/// are not probability vectors to begin with.
pub fn floor_reference(reference: &[f64]) -> Result<Vec<f64>> {
    if !crate::model::is_probability_row(reference, 1e-9) {
        return Err(Error::InvalidArgument("reference must be a probability row".into()));
    }
    let clamped: Vec<f64> = reference.iter().map(|p| p.max(REFERENCE_FLOOR)).collect();
    let total: f64 = clamped.iter().sum();
    Ok(clamped.into_iter().map(|p| p / total).collect())
}

/// `phi(pi) = -eta KL(pi || reference)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlRegularizer {
    eta: f64,
    reference: Vec<f64>,
}

impl KlRegularizer {
    pub fn new(eta: f64, reference: &[f64]) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("kl eta must be > 0, got {eta}")));
        }
        Ok(Self {
            eta,
            reference: floor_reference(reference)?,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }
}

impl Regularizer for KlRegularizer {
    fn value(&self, pi: &[f64]) -> f64 {
        -self.eta * crate::numeric::kl_divergence(pi, &self.reference)
    }

    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        pi.iter()
            .zip(&self.reference)
            .map(|(p, r)| -self.eta * ((p / r).ln() + 1.0))
            .collect()
    }

    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        Some(kl_backup_unchecked(w, self.eta, &self.reference))
    }

    fn kl_form(&self, num_actions: usize) -> Option<KlForm> {
        (num_actions == self.reference.len()).then(|| KlForm {
            eta: self.eta,
            reference: self.reference.clone(),
            constant: 0.0,
        })
    }

    fn name(&self) -> String {
        format!("kl(eta={})", self.eta)
    }
}

/// `phi = 0`; the conjugate is the plain max.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRegularizer;

impl Regularizer for ZeroRegularizer {
    fn value(&self, _pi: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        vec![0.0; pi.len()]
    }
    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        Some(standard_backup(w))
    }
    fn name(&self) -> String {
        "zero".into()
    }
}

/// `factor * phi` for `factor > 0`.
#[derive(Debug, Clone)]
pub struct Scaled<R> {
    pub inner: R,
    pub factor: f64,
}

impl<R: Regularizer> Regularizer for Scaled<R> {
    fn value(&self, pi: &[f64]) -> f64 {
        self.factor * self.inner.value(pi)
    }

    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        self.inner.gradient(pi).into_iter().map(|g| self.factor * g).collect()
    }

    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        // max w.pi + c phi(pi) = c * max (w/c).pi + phi(pi)
        let scaled: Vec<f64> = w.iter().map(|x| x / self.factor).collect();
        self.inner.closed_form(&scaled).map(|b| Backup {
            value: self.factor * b.value,
            policy: b.policy,
        })
    }

    fn kl_form(&self, num_actions: usize) -> Option<KlForm> {
        self.inner.kl_form(num_actions).map(|f| KlForm {
            eta: self.factor * f.eta,
            reference: f.reference,
            constant: self.factor * f.constant,
        })
    }

    fn name(&self) -> String {
        format!("{}*{}", self.factor, self.inner.name())
    }
}

/// Soft backup: value `eta ln sum exp(w/eta)`, policy `softmax(w/eta)`.
pub fn entropy_backup(w: &[f64], eta: f64) -> ConjugateResult {
    let scaled: Vec<f64> = w.iter().map(|x| x / eta).collect();
    let ones = vec![1.0; w.len()];
    Backup {
        value: eta * weighted_logsumexp(&scaled, &ones),
        policy: weighted_softmax(&scaled, &ones),
    }
}

/// KL-regularized backup: value `eta ln sum ref_a exp(w_a/eta)`, policy
/// proportional to `ref_a exp(w_a/eta)`.
pub fn kl_backup(w: &[f64], eta: f64, reference: &[f64]) -> Result<ConjugateResult> {
    if w.len() != reference.len() {
        return Err(Error::ShapeMismatch("reference length differs from |A|".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("kl eta must be > 0, got {eta}")));
    }
    Ok(kl_backup_unchecked(w, eta, &floor_reference(reference)?))
}

fn kl_backup_unchecked(w: &[f64], eta: f64, reference: &[f64]) -> ConjugateResult {
    let scaled: Vec<f64> = w.iter().map(|x| x / eta).collect();
    Backup {
        value: eta * weighted_logsumexp(&scaled, reference),
        policy: weighted_softmax(&scaled, reference),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConjugateOptions {
    /// Relative objective improvement over [`STALL_WINDOW`] steps below which
    /// the solver stops; also the Frank-Wolfe gap target.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for ConjugateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_steps: 200_000,
        }
    }
}

pub const STALL_WINDOW: usize = 50;
const MIN_PROB: f64 = 1e-300;

/// `max_{pi in simplex} w.pi + phi(pi)` by entropic mirror ascent from the
/// uniform row, with step halving on failure and doubling on success.
///
/// Stops when the Frank-Wolfe gap `max_a g_a - pi.g` (an upper bound on the
/// suboptimality for concave `phi`) or the relative objective improvement
/// over the last [`STALL_WINDOW`] accepted steps drops below `tol`.
pub fn numeric_conjugate(w: &[f64], phi: &dyn Regularizer, opts: &ConjugateOptions) -> Result<ConjugateResult> {
    let n = w.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty lookahead vector".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("conjugate tol must be positive".into()));
    }
    if n == 1 {
        return Ok(Backup {
            value: w[0] + phi.value(&[1.0]),
            policy: vec![1.0],
        });
    }
    // the problem is invariant to shifting w, so solve on max-centered input
    let shift = max_of(w);
    let centered: Vec<f64> = w.iter().map(|x| x - shift).collect();
    let objective = |p: &[f64]| dot(&centered, p) + phi.value(p);

    let mut pi = vec![1.0 / n as f64; n];
    let mut f = objective(&pi);
    if !f.is_finite() {
        return Err(Error::Numerical(format!(
            "{} is not finite at the uniform row",
            phi.name()
        )));
    }
    let mut step = 1.0;
    let mut history = vec![f];
    let mut candidate = vec![0.0; n];

    for _ in 0..opts.max_steps {
        let grad = phi.gradient(&pi);
        let g: Vec<f64> = centered.iter().zip(&grad).map(|(a, b)| a + b).collect();
        let g_max = max_of(&g);
        let gap = g_max - dot(&pi, &g);
        if gap <= opts.tol * f.abs().max(1.0) {
            return Ok(finish(shift, f, pi));
        }

        let mut accepted = false;
        for _ in 0..200 {
            let mut total = 0.0;
            for ((c, p), gi) in candidate.iter_mut().zip(&pi).zip(&g) {
                *c = (p * (step * (gi - g_max)).exp()).max(MIN_PROB);
                total += *c;
            }
            candidate.iter_mut().for_each(|c| *c /= total);
            let fc = objective(&candidate);
            if fc > f {
                std::mem::swap(&mut pi, &mut candidate);
                f = fc;
                step = (step * 2.0).min(1e150);
                accepted = true;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                break;
            }
        }
        if !accepted {
            // no ascent direction survives rounding
            return Ok(finish(shift, f, pi));
        }
        history.push(f);
        if history.len() > STALL_WINDOW {
            let then = history[history.len() - 1 - STALL_WINDOW];
            if f - then <= opts.tol * f.abs().max(1.0) {
                return Ok(finish(shift, f, pi));
            }
        }
    }
    Err(Error::ConjugateNotConverged {
        iterations: opts.max_steps,
        best: finish(shift, f, pi),
    })
}

fn finish(shift: f64, f: f64, pi: Vec<f64>) -> Backup {
    Backup {
        value: shift + f,
        policy: pi,
    }
}

/// Closed form when available, otherwise [`numeric_conjugate`].
pub fn conjugate_backup(w: &[f64], phi: &dyn Regularizer, opts: &ConjugateOptions) -> Result<ConjugateResult> {
    match phi.closed_form(w) {
        Some(b) => Ok(b),
        None => numeric_conjugate(w, phi, opts),
    }
}

/// Per-state regularized Bellman operator.
#[derive(Debug, Clone)]
pub struct RegularizedBackup {
    regularizers: Vec<Arc<dyn Regularizer>>,
    opts: ConjugateOptions,
}

impl RegularizedBackup {
    pub fn new(regularizers: Vec<Arc<dyn Regularizer>>) -> Self {
        Self {
            regularizers,
            opts: ConjugateOptions::default(),
        }
    }

    /// The same regularizer at every state.
    pub fn broadcast(phi: Arc<dyn Regularizer>, num_states: usize) -> Self {
        Self::new(vec![phi; num_states])
    }

    pub fn with_options(mut self, opts: ConjugateOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn regularizer(&self, state: usize) -> &dyn Regularizer {
        self.regularizers[state].as_ref()
    }

    pub fn regularizers(&self) -> &[Arc<dyn Regularizer>] {
        &self.regularizers
    }
}

/// Builds the regularized operator from one regularizer per state.
pub fn regularized_backup_operator(phi_per_state: Vec<Arc<dyn Regularizer>>) -> RegularizedBackup {
    RegularizedBackup::new(phi_per_state)
}

impl BackupOperator for RegularizedBackup {
    fn backup(&self, state: usize, w: &[f64]) -> Result<Backup> {
        let phi = self.regularizers.get(state).ok_or(Error::IndexOutOfRange {
            index: state,
            len: self.regularizers.len(),
        })?;
        conjugate_backup(w, phi.as_ref(), &self.opts)
    }

    fn name(&self) -> String {
        match self.regularizers.first() {
            Some(phi) => format!("regularized[{}]", phi.name()),
            None => "regularized[]".into(),
        }
    }
}

/// `BD(p || q) = -phi(p) + phi(q) + grad phi(q).(p - q)`, nonnegative for
/// concave `phi`. `q` must lie in the simplex interior.
pub fn bregman_divergence(phi: &dyn Regularizer, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch("p and q differ in length".into()));
    }
    if q.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidArgument(
            "bregman divergence needs q in the simplex interior".into(),
        ));
    }
    let grad = phi.gradient(q);
    let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
    Ok(-phi.value(p) + phi.value(q) + dot(&grad, &diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::kl_divergence;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn entropy_backup_examples() {
        let b = entropy_backup(&[0.0, 0.0], 1.0);
        assert!(close(b.value, 2f64.ln(), 1e-15));
        assert_eq!(b.policy, vec![0.5, 0.5]);

        let b = entropy_backup(&[1.0, 0.0], 1.0);
        let e = (-1f64).exp();
        assert!(close(b.policy[0], 1.0 / (1.0 + e), 1e-15));
        assert!(close(b.policy[1], e / (1.0 + e), 1e-15));
        assert!(close(b.policy[0], 0.731_059, 1e-6));

        let b = entropy_backup(&[1000.0, 0.0], 1.0);
        assert!(b.value.is_finite() && close(b.value, 1000.0, 1e-12));
    }

    #[test]
    fn kl_with_uniform_reference() {
        let w = [0.3, -1.2, 2.0];
        let u = [1.0 / 3.0; 3];
        let kl = kl_backup(&w, 0.7, &u).unwrap();
        let ent = entropy_backup(&w, 0.7);
        assert!(close(kl.value, ent.value - 0.7 * 3f64.ln(), 1e-14));
        for (a, b) in kl.policy.iter().zip(&ent.policy) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn kl_equal_advantage_returns_reference() {
        let r = [0.2, 0.5, 0.3];
        let b = kl_backup(&[4.0, 4.0, 4.0], 2.0, &r).unwrap();
        for (a, b) in b.policy.iter().zip(&r) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn kl_two_action_grid_oracle() {
        // maximize w.pi - KL(pi || ref) over a fine grid on the 1-simplex
        let (w, r) = ([1.0, 0.0], [0.9, 0.1]);
        let b = kl_backup(&w, 1.0, &r).unwrap();
        let n = 200_000;
        let (mut best, mut best_p) = (f64::NEG_INFINITY, 0.0);
        for i in 0..=n {
            let p = i as f64 / n as f64;
            let pi = [p, 1.0 - p];
            let f = w[0] * p - kl_divergence(&pi, &r);
            if f > best {
                best = f;
                best_p = p;
            }
        }
        assert!(close(b.policy[0], best_p, 1e-5));
        assert!(close(b.value, best, 1e-9));
    }

    #[test]
    fn kl_is_entropy_on_log_shifted_rewards() {
        let w = [0.5, 1.5, -0.25, 0.0];
        let r = [0.1, 0.2, 0.3, 0.4];
        let eta = 0.8;
        let kl = kl_backup(&w, eta, &r).unwrap();
        let shifted: Vec<f64> = w.iter().zip(&r).map(|(x, p)| x + eta * p.ln()).collect();
        let ent = entropy_backup(&shifted, eta);
        assert!(close(kl.value, ent.value, 1e-14));
        for (a, b) in kl.policy.iter().zip(&ent.policy) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn numeric_matches_entropy_closed_form() {
        let phi = EntropyRegularizer::new(1.0).unwrap();
        for w in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5], [10.0, 9.5, -3.0]] {
            let closed = entropy_backup(&w, 1.0);
            let num = numeric_conjugate(&w, &phi, &ConjugateOptions::default()).unwrap();
            assert!(close(num.value, closed.value, 1e-7));
            for (a, b) in num.policy.iter().zip(&closed.policy) {
                assert!(close(*a, *b, 1e-7));
            }
        }
    }

    #[derive(Debug)]
    struct Flat;
    impl Regularizer for Flat {
        fn value(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn gradient(&self, pi: &[f64]) -> Vec<f64> {
            vec![0.0; pi.len()]
        }
        fn name(&self) -> String {
            "flat".into()
        }
    }

    #[test]
    fn numeric_zero_regularizer_is_max() {
        let b = numeric_conjugate(&[0.2, 1.7, -3.0], &Flat, &ConjugateOptions::default()).unwrap();
        assert!(close(b.value, 1.7, 1e-12));
        assert!(b.policy[1] > 1.0 - 1e-12);
    }

    #[test]
    fn numeric_budget_exhaustion_carries_best_iterate() {
        let phi = crate::distributional::MarginalMomentModel::new(vec![1.0, 2.0, 0.5]).unwrap();
        let err = numeric_conjugate(
            &[0.3, 0.0, 0.1],
            &phi,
            &ConjugateOptions {
                tol: 1e-300,
                max_steps: 3,
            },
        )
        .unwrap_err();
        match err {
            Error::ConjugateNotConverged { iterations, best } => {
                assert_eq!(iterations, 3);
                assert!(crate::model::is_probability_row(&best.policy, 1e-12));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn high_and_low_temperature_limits() {
        let w = [0.4, -0.2, 1.3];
        let hot = entropy_backup(&w, 1e6);
        let mean = w.iter().sum::<f64>() / 3.0;
        assert!(close(hot.value, 1e6 * 3f64.ln() + mean, 1e-4));
        for p in &hot.policy {
            assert!(close(*p, 1.0 / 3.0, 1e-6));
        }
        let cold = entropy_backup(&w, 1e-6);
        let std = standard_backup(&w);
        for (a, b) in cold.policy.iter().zip(&std.policy) {
            assert!(close(*a, *b, 1e-3));
        }
    }

    #[test]
    fn entropy_duality_gap() {
        let phi = EntropyRegularizer::new(0.6).unwrap();
        for w in [[0.1, 0.2, 0.3], [5.0, -5.0, 0.0], [0.0, 0.0, 1e-3]] {
            let b = entropy_backup(&w, 0.6);
            assert!(close(b.value - dot(&w, &b.policy), phi.value(&b.policy), 1e-8));
        }
    }

    #[test]
    fn bregman_examples() {
        let phi = EntropyRegularizer::new(1.0).unwrap();
        let q = [0.2, 0.3, 0.5];
        assert!(close(bregman_divergence(&phi, &q, &q).unwrap(), 0.0, 1e-15));
        let u = [1.0 / 3.0; 3];
        let p = [0.7, 0.1, 0.2];
        assert!(close(
            bregman_divergence(&phi, &p, &u).unwrap(),
            kl_divergence(&p, &u),
            1e-14
        ));
        assert!(bregman_divergence(&phi, &p, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn scaled_closed_form() {
        let phi = Scaled {
            inner: EntropyRegularizer::new(1.0).unwrap(),
            factor: 2.5,
        };
        let w = [0.3, 1.0];
        let a = phi.closed_form(&w).unwrap();
        let b = entropy_backup(&w, 2.5);
        assert!(close(a.value, b.value, 1e-14));
    }
}
