//! Distributionally robust stochastic backups
//! `sup_{d in Xi_s} E_d[max_a (w_a + eps_a)]` for three ambiguity families.
//!
//! Each family is represented by its equivalent concave regularizer, and the
//! backup is the regularized conjugate of that regularizer:
//!
//! | ambiguity set                          | regularizer `phi_s(pi)`                         |
//! |----------------------------------------|-------------------------------------------------|
//! | fixed marginal CDFs `F_sa`             | `sum_a int_{1-pi_a}^1 F_sa^{-1}(t) dt`          |
//! | mean 0, marginal deviations `sigma_sa` | `sum_a sigma_sa sqrt(pi_a (1 - pi_a))`           |
//! | mean 0, covariance `Sigma_s`           | `tr (Sigma^1/2 (Diag(pi) - pi pi^T) Sigma^1/2)^1/2` |
//!
//! The DS policy is the gradient of the backup value in `w`, which is the
//! argmax of the conjugate problem.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{
    adaptive_gauss_legendre, exp_integral_e1, is_symmetric, weighted_logsumexp, weighted_softmax, EULER_GAMMA,
};
use crate::regularized::{conjugate_backup, ConjugateOptions, ConjugateResult, RegularizedBackup, Regularizer};
use crate::rng::StreamRng;
use crate::solver::{Backup, BackupOperator};
use crate::stochastic::{mc_emax_with, EmaxEstimate};

pub const QUADRATURE_ABS_TOL: f64 = 1e-10;
pub const QUADRATURE_MAX_SUBDIVISIONS: usize = 10_000;

/// Monotone piecewise-linear inverse CDF through `(t_i, x_i)` with
/// `t_0 = 0` and `t_last = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabulatedInverseCdf {
    knots: Vec<(f64, f64)>,
}

impl TabulatedInverseCdf {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidArgument(
                "tabulated inverse CDF needs at least two knots".into(),
            ));
        }
        if knots.iter().any(|(t, x)| !t.is_finite() || !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "tabulated inverse CDF must be finite (unbounded tails are rejected)".into(),
            ));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::InvalidArgument(
                "tabulated knots must span t = 0 to t = 1".into(),
            ));
        }
        if knots.windows(2).any(|k| k[1].0 <= k[0].0) {
            return Err(Error::InvalidArgument("tabulated t values must increase".into()));
        }
        let table = Self { knots };
        // probe grid monotonicity
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let x = table.eval(i as f64 / 1000.0);
            if x < prev {
                return Err(Error::InvalidArgument(
                    "tabulated inverse CDF is not nondecreasing".into(),
                ));
            }
            prev = x;
        }
        Ok(table)
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let i = self.knots.partition_point(|(ti, _)| *ti <= t);
        if i == 0 {
            return self.knots[0].1;
        }
        if i == self.knots.len() {
            return self.knots[i - 1].1;
        }
        let (t0, x0) = self.knots[i - 1];
        let (t1, x1) = self.knots[i];
        x0 + (x1 - x0) * (t - t0) / (t1 - t0)
    }
}

/// Marginal law of one noise entry, described by its inverse CDF.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginalFamily {
    Exponential {
        rate: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Location 0, so the mean is `scale * EULER_GAMMA`.
    Gumbel {
        scale: f64,
    },
    Tabulated {
        table: TabulatedInverseCdf,
    },
}

impl MarginalFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Exponential { rate } => *rate > 0.0 && rate.is_finite(),
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Self::Gumbel { scale } => *scale > 0.0 && scale.is_finite(),
            Self::Tabulated { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid marginal {self:?}")))
        }
    }

    pub fn inverse_cdf(&self, t: f64) -> f64 {
        match self {
            Self::Exponential { rate } => -(-t).ln_1p() / rate,
            Self::Uniform { lo, hi } => lo + (hi - lo) * t,
            Self::Gumbel { scale } => -scale * (-t.ln()).ln(),
            Self::Tabulated { table } => table.eval(t),
        }
    }

    /// `int_{1-p}^1 F^{-1}(t) dt`: the mean of the noise restricted to its
    /// upper `p`-quantile, times `p`.
    pub fn upper_tail_integral(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        if p == 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => (p - p * p.ln()) / rate,
            Self::Uniform { lo, hi } => lo * p + (hi - lo) * (2.0 * p - p * p) / 2.0,
            Self::Gumbel { scale } => {
                if p == 1.0 {
                    return scale * EULER_GAMMA;
                }
                let u = -(-p).ln_1p();
                scale * ((1.0 - p) * u.ln() + exp_integral_e1(u) + EULER_GAMMA)
            }
            Self::Tabulated { table } => {
                // split at the knots: a kink inside one panel can fool the
                // halving test into accepting a wrong value
                let start = 1.0 - p;
                let mut cuts = vec![start];
                cuts.extend(table.knots().iter().map(|k| k.0).filter(|t| *t > start && *t < 1.0));
                cuts.push(1.0);
                let mut total = 0.0;
                for ab in cuts.windows(2) {
                    let tol = QUADRATURE_ABS_TOL * (ab[1] - ab[0]) / p;
                    match adaptive_gauss_legendre(|t| table.eval(t), ab[0], ab[1], tol, QUADRATURE_MAX_SUBDIVISIONS) {
                        Some(q) => total += q.value,
                        None => return f64::NAN,
                    }
                }
                total
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.upper_tail_integral(1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // open interval keeps the logarithmic families finite
        let u: f64 = rng.random::<f64>().clamp(f64::EPSILON, 1.0 - f64::EPSILON);
        self.inverse_cdf(u)
    }
}

/// Marginal-distribution ambiguity at one state: one marginal per action,
/// joint coupling unrestricted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalDistributionModel {
    marginals: Vec<MarginalFamily>,
}

impl MarginalDistributionModel {
    pub fn new(marginals: Vec<MarginalFamily>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidArgument("need at least one marginal".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self { marginals })
    }

    pub fn marginals(&self) -> &[MarginalFamily] {
        &self.marginals
    }

    /// `Some(rate)` when every marginal is exponential with the same rate.
    fn common_exponential_rate(&self) -> Option<f64> {
        let first = match self.marginals[0] {
            MarginalFamily::Exponential { rate } => rate,
            _ => return None,
        };
        self.marginals
            .iter()
            .all(|m| matches!(m, MarginalFamily::Exponential { rate } if *rate == first))
            .then_some(first)
    }

    /// `phi` at a one-hot row on `action`, i.e. the marginal mean.
    pub fn vertex_value(&self, action: usize) -> f64 {
        self.marginals[action].mean()
    }
}

/// `phi_s(pi) = sum_a int_{1-pi_a}^1 F_a^{-1}(t) dt`.
pub fn mdm_regularizer(model: &MarginalDistributionModel, pi: &[f64]) -> f64 {
    model.value(pi)
}

impl Regularizer for MarginalDistributionModel {
    fn value(&self, pi: &[f64]) -> f64 {
        self.marginals
            .iter()
            .zip(pi)
            .map(|(m, p)| m.upper_tail_integral(*p))
            .sum()
    }

    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        self.marginals
            .iter()
            .zip(pi)
            .map(|(m, p)| m.inverse_cdf(1.0 - p))
            .collect()
    }

    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        // exponential(rate) marginals: phi = (1 + entropy)/rate
        let rate = self.common_exponential_rate()?;
        let scaled: Vec<f64> = w.iter().map(|x| x * rate).collect();
        let ones = vec![1.0; w.len()];
        Some(Backup {
            value: (1.0 + weighted_logsumexp(&scaled, &ones)) / rate,
            policy: weighted_softmax(&scaled, &ones),
        })
    }

    fn name(&self) -> String {
        "mdm".into()
    }
}

/// Marginal-moment ambiguity at one state: zero means, fixed deviations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalMomentModel {
    sigma: Vec<f64>,
}

impl MarginalMomentModel {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() || sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("sigma entries must be finite and >= 0".into()));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

/// `phi_s(pi) = sum_a sigma_a sqrt(pi_a (1 - pi_a))`.
pub fn mmm_regularizer(model: &MarginalMomentModel, pi: &[f64]) -> f64 {
    model.value(pi)
}

impl Regularizer for MarginalMomentModel {
    fn value(&self, pi: &[f64]) -> f64 {
        self.sigma
            .iter()
            .zip(pi)
            .map(|(s, p)| s * (p * (1.0 - p)).max(0.0).sqrt())
            .sum()
    }

    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        self.sigma
            .iter()
            .zip(pi)
            .map(|(s, p)| {
                if *s == 0.0 {
                    0.0
                } else {
                    s * (1.0 - 2.0 * p) / (2.0 * (p * (1.0 - p)).sqrt())
                }
            })
            .collect()
    }

    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        if self.sigma.iter().all(|s| *s == 0.0) {
            return Some(crate::solver::standard_backup(w));
        }
        None
    }

    fn name(&self) -> String {
        "mmm".into()
    }
}

/// Covariance ambiguity at one state: zero mean, fixed covariance `Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    cov: DMatrix<f64>,
    /// `Sigma^{1/2} Q` where the columns of `Q` span the complement of
    /// `Sigma^{-1/2} 1`, the null direction shared by every inner matrix.
    reduced: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

const FD_STEP: f64 = 1e-6;

impl CovarianceModel {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !is_symmetric(&cov, 1e-10) {
            return Err(Error::InvalidArgument(
                "covariance must be square and symmetric within 1e-10".into(),
            ));
        }
        let n = cov.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("empty covariance".into()));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "covariance must be positive definite (min eigenvalue {min_eig:e})"
            )));
        }
        let roots = eig.eigenvalues.map(f64::sqrt);
        let sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        let inv_roots = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        let inv_sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&inv_roots) * eig.eigenvectors.transpose();
        let null = (&inv_sqrt * DVector::from_element(n, 1.0)).normalize();
        let basis = complement_basis(&null);
        Ok(Self {
            reduced: &sqrt * basis,
            sqrt,
            cov: sym,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("covariance must be square".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.cov.nrows())
            .map(|i| self.cov.row(i).iter().copied().collect())
            .collect()
    }
}

/// Orthonormal basis (as columns) of the complement of a unit vector, taken
/// from a Householder reflection mapping `u` to a coordinate axis.
fn complement_basis(u: &DVector<f64>) -> DMatrix<f64> {
    let n = u.len();
    let mut v = u.clone();
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign;
    let norm_sq = v.norm_squared();
    let h = DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / norm_sq);
    h.columns(1, n - 1).into_owned()
}

/// `tr (Sigma^1/2 (Diag(pi) - pi pi^T) Sigma^1/2)^1/2`.
pub fn covariance_regularizer(model: &CovarianceModel, pi: &[f64]) -> f64 {
    model.value(pi)
}

impl Regularizer for CovarianceModel {
    fn value(&self, pi: &[f64]) -> f64 {
        let k = &self.reduced;
        let m = k.ncols();
        if m == 0 {
            return 0.0;
        }
        let p = DVector::from_column_slice(pi);
        let kp = k.transpose() * &p;
        let inner = DMatrix::from_fn(m, m, |i, j| {
            (0..k.nrows()).map(|a| k[(a, i)] * pi[a] * k[(a, j)]).sum::<f64>() - kp[i] * kp[j]
        });
        // the reduced matrix is PSD; clamp roundoff below zero
        inner.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).sum()
    }

    /// Tangent-space central differences along `e_a - pi`.
    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        let n = pi.len();
        let mut out = vec![0.0; n];
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        for a in 0..n {
            let h = FD_STEP.min(0.5 * pi[a]);
            if h <= 0.0 {
                out[a] = f64::INFINITY;
                continue;
            }
            for b in 0..n {
                let e = if a == b { 1.0 } else { 0.0 };
                plus[b] = pi[b] + h * (e - pi[b]);
                minus[b] = pi[b] - h * (e - pi[b]);
            }
            out[a] = (self.value(&plus) - self.value(&minus)) / (2.0 * h);
        }
        out
    }

    fn name(&self) -> String {
        "covariance".into()
    }
}

/// One state's ambiguity set.
#[derive(Debug, Clone)]
pub enum AmbiguitySet {
    Mdm(MarginalDistributionModel),
    Mmm(MarginalMomentModel),
    Covariance(CovarianceModel),
}

impl AmbiguitySet {
    pub fn regularizer(&self) -> &dyn Regularizer {
        match self {
            Self::Mdm(m) => m,
            Self::Mmm(m) => m,
            Self::Covariance(m) => m,
        }
    }

    pub fn into_regularizer(self) -> Arc<dyn Regularizer> {
        match self {
            Self::Mdm(m) => Arc::new(m),
            Self::Mmm(m) => Arc::new(m),
            Self::Covariance(m) => Arc::new(m),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Mdm(_) => "mdm",
            Self::Mmm(_) => "mmm",
            Self::Covariance(_) => "covariance",
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Self::Mdm(m) => m.marginals.len(),
            Self::Mmm(m) => m.sigma.len(),
            Self::Covariance(m) => m.cov.nrows(),
        }
    }

    /// Lower bound on the backup: `max_a (w_a + phi(e_a))`. For MMM and
    /// covariance sets `phi(e_a) = 0`; for MDM it is the marginal mean.
    pub fn vertex_bound(&self, w: &[f64]) -> f64 {
        let n = w.len();
        (0..n)
            .map(|a| {
                let mut e = vec![0.0; n];
                e[a] = 1.0;
                w[a] + self.regularizer().value(&e)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Draws one noise vector from a fixed member of the set: independent
    /// marginals (MDM), independent symmetric two-point laws (MMM), or the
    /// Gaussian with the given covariance.
    pub fn sample_member(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self {
            Self::Mdm(m) => {
                for (o, f) in out.iter_mut().zip(&m.marginals) {
                    *o = f.sample(rng);
                }
            }
            Self::Mmm(m) => {
                for (o, s) in out.iter_mut().zip(&m.sigma) {
                    *o = if rng.random::<bool>() { *s } else { -*s };
                }
            }
            Self::Covariance(m) => {
                let factor = &m.sqrt;
                let z: Vec<f64> = (0..out.len()).map(|_| StandardNormal.sample(rng)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|j| factor[(i, j)] * z[j]).sum();
                }
            }
        }
    }
}

/// DS backup value and policy via the equivalent regularizer.
pub fn ds_backup(w: &[f64], ambiguity: &AmbiguitySet, opts: &ConjugateOptions) -> Result<ConjugateResult> {
    if w.len() != ambiguity.num_actions() {
        return Err(Error::ShapeMismatch("ambiguity set size differs from |A|".into()));
    }
    conjugate_backup(w, ambiguity.regularizer(), opts)
}

/// DS Bellman operator. It is literally a [`RegularizedBackup`] over the
/// ambiguity sets' regularizers.
#[derive(Debug, Clone)]
pub struct DsBackup {
    inner: RegularizedBackup,
}

impl DsBackup {
    pub fn new(sets: Vec<AmbiguitySet>) -> Self {
        Self {
            inner: RegularizedBackup::new(sets.into_iter().map(AmbiguitySet::into_regularizer).collect()),
        }
    }

    pub fn with_options(self, opts: ConjugateOptions) -> Self {
        Self {
            inner: self.inner.with_options(opts),
        }
    }

    /// The regularized operator this DS operator is identical to.
    pub fn as_regularized(&self) -> &RegularizedBackup {
        &self.inner
    }
}

impl BackupOperator for DsBackup {
    fn backup(&self, state: usize, w: &[f64]) -> Result<Backup> {
        self.inner.backup(state, w)
    }

    fn name(&self) -> String {
        match self.inner.regularizers().first() {
            Some(phi) => format!("ds[{}]", phi.name()),
            None => "ds[]".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundCheck {
    pub mc: EmaxEstimate,
    pub ds_value: f64,
    pub ok: bool,
}

/// Monte Carlo `E[max(w + eps)]` under a member of the set must not exceed
/// the DS value (the supremum) by more than three standard errors.
pub fn ds_lower_bound_check(
    w: &[f64],
    ambiguity: &AmbiguitySet,
    samples: usize,
    seed: u64,
    opts: &ConjugateOptions,
) -> Result<LowerBoundCheck> {
    let ds = ds_backup(w, ambiguity, opts)?;
    let mut rng = crate::rng::tagged_rng(seed, &[0xD5]);
    let mc = mc_emax_with(w, samples, &mut rng, |rng, out| ambiguity.sample_member(rng, out))?;
    let ok = mc.mean <= ds.value + 3.0 * mc.std_error;
    Ok(LowerBoundCheck {
        mc,
        ds_value: ds.value,
        ok,
    })
}

/// Two-action MMM policy with equal deviations:
/// `p* = (1 + delta / sqrt(delta^2 + 4 sigma^2)) / 2`, `delta = w_1 - w_2`.
pub fn mmm_two_action_policy(w: [f64; 2], sigma: f64) -> f64 {
    let delta = w[0] - w[1];
    if sigma == 0.0 {
        return if delta >= 0.0 { 1.0 } else { 0.0 };
    }
    0.5 * (1.0 + delta / (delta * delta + 4.0 * sigma * sigma).sqrt())
}

/// Dominance floor used by the invariant tests: DS value is at least the best
/// vertex value.
pub fn ds_dominance_gap(w: &[f64], ambiguity: &AmbiguitySet, opts: &ConjugateOptions) -> Result<f64> {
    Ok(ds_backup(w, ambiguity, opts)?.value - ambiguity.vertex_bound(w))
}
