//! Constrained backups `max_{pi in D_s} w.pi` over KL, L1 and chi-square balls
//! around a reference row, plus conversions between constrained and
//! regularized models.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{is_probability_row, q_vector, MdpModel};
use crate::numeric::{chi_square, dot, kl_divergence, l1_distance, max_of, min_of, weighted_softmax};
use crate::regularized::{
    conjugate_backup, kl_backup, ConjugateOptions, ConjugateResult, KlForm, RegularizedBackup, Regularizer, Scaled,
};
use crate::solver::{argmax, standard_backup, value_iteration, Backup, BackupOperator, SolveOptions, SolveResult};

/// Feasible policy set at one state.
#[derive(Debug, Clone)]
pub enum ConstraintSet {
    /// `KL(pi || reference) <= radius`.
    KlBall {
        reference: Vec<f64>,
        radius: f64,
    },
    /// `||pi - reference||_1 <= radius`, `radius` in `[0, 2]`.
    L1Ball {
        reference: Vec<f64>,
        radius: f64,
    },
    /// `sum (pi_a - ref_a)^2 / ref_a <= radius`.
    L2Ball {
        reference: Vec<f64>,
        radius: f64,
    },
    Singleton {
        row: Vec<f64>,
    },
    Full,
    /// `-phi(pi) <= level` for a concave `phi`.
    Sublevel {
        phi: Arc<dyn Regularizer>,
        level: f64,
    },
}

impl ConstraintSet {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::KlBall { .. } => "kl_ball",
            Self::L1Ball { .. } => "l1_ball",
            Self::L2Ball { .. } => "l2_ball",
            Self::Singleton { .. } => "singleton",
            Self::Full => "full",
            Self::Sublevel { .. } => "sublevel",
        }
    }

    pub fn validate(&self, num_actions: usize) -> Result<()> {
        let check_ref = |r: &[f64], strict: bool| -> Result<()> {
            if r.len() != num_actions {
                return Err(Error::ShapeMismatch(format!(
                    "reference has {} entries, expected {num_actions}",
                    r.len()
                )));
            }
            if !is_probability_row(r, 1e-10) {
                return Err(Error::InvalidArgument("reference is not a probability row".into()));
            }
            if strict && r.iter().any(|p| *p <= 0.0) {
                return Err(Error::InvalidArgument("reference must be strictly positive".into()));
            }
            Ok(())
        };
        let check_radius = |c: f64| -> Result<()> {
            if !(c >= 0.0) {
                return Err(Error::InvalidArgument(format!("radius must be >= 0, got {c}")));
            }
            Ok(())
        };
        match self {
            Self::KlBall { reference, radius } | Self::L2Ball { reference, radius } => {
                check_ref(reference, true)?;
                check_radius(*radius)
            }
            Self::L1Ball { reference, radius } => {
                check_ref(reference, false)?;
                check_radius(*radius)?;
                if *radius > 2.0 {
                    return Err(Error::InvalidArgument(format!("l1 radius must be <= 2, got {radius}")));
                }
                Ok(())
            }
            Self::Singleton { row } => check_ref(row, false),
            Self::Full => Ok(()),
            Self::Sublevel { level, .. } => {
                if level.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("sublevel must be finite".into()))
                }
            }
        }
    }

    /// Amount by which `pi` violates the constraint (`<= 0` when feasible).
    pub fn violation(&self, pi: &[f64]) -> f64 {
        match self {
            Self::KlBall { reference, radius } => kl_divergence(pi, reference) - radius,
            Self::L1Ball { reference, radius } => l1_distance(pi, reference) - radius,
            Self::L2Ball { reference, radius } => chi_square(pi, reference) - radius,
            Self::Singleton { row } => pi.iter().zip(row).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            Self::Full => 0.0,
            Self::Sublevel { phi, level } => -phi.value(pi) - level,
        }
    }

    /// A point that is always feasible.
    pub fn anchor(&self, num_actions: usize) -> Vec<f64> {
        match self {
            Self::KlBall { reference, .. } | Self::L1Ball { reference, .. } | Self::L2Ball { reference, .. } => {
                reference.clone()
            }
            Self::Singleton { row } => row.clone(),
            _ => vec![1.0 / num_actions as f64; num_actions],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CtOptions {
    /// Duality-gap target for the bisection solvers.
    pub tol: f64,
    pub conjugate: ConjugateOptions,
}

impl Default for CtOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            conjugate: ConjugateOptions::default(),
        }
    }
}

/// Constrained backup with its certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtBackupResult {
    pub value: f64,
    pub policy: Vec<f64>,
    /// Lagrange multiplier of the constraint (0 when inactive), when the
    /// solver works through a dual.
    pub multiplier: Option<f64>,
    /// Dual value minus primal value at the returned point.
    pub gap: f64,
    /// Number of dual / inner evaluations used.
    pub evaluations: usize,
}

impl CtBackupResult {
    fn exact(value: f64, policy: Vec<f64>, multiplier: Option<f64>) -> Self {
        Self {
            value,
            policy,
            multiplier,
            gap: 0.0,
            evaluations: 0,
        }
    }

    pub fn into_backup(self) -> Backup {
        Backup {
            value: self.value,
            policy: self.policy,
        }
    }
}

/// Reference mass on the argmax set and the reference restricted to it.
fn restrict_to_argmax(centered: &[f64], reference: &[f64]) -> (f64, Vec<f64>) {
    let mass: f64 = centered
        .iter()
        .zip(reference)
        .filter(|(w, _)| **w == 0.0)
        .map(|(_, p)| p)
        .sum();
    let row = centered
        .iter()
        .zip(reference)
        .map(|(w, p)| if *w == 0.0 { p / mass } else { 0.0 })
        .collect();
    (mass, row)
}

fn center(w: &[f64]) -> (f64, Vec<f64>, f64) {
    let top = max_of(w);
    let range = top - min_of(w);
    (top, w.iter().map(|x| x - top).collect(), range)
}

fn check_len(w: &[f64], reference: &[f64]) -> Result<()> {
    if w.len() != reference.len() || w.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "q-vector has {} entries, reference has {}",
            w.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// `max w.pi` over `KL(pi || reference) <= c`.
///
/// The dual `min_{y >= 0} c y + y ln sum ref_a exp(w_a / y)` has derivative
/// `c - KL(p_y || ref)` with `p_y ~ ref * exp(w / y)`, so `y*` is found by
/// bisection on that KL. The returned row is `p_y` at the feasible end of
/// the bracket and `gap = y (c - KL(p_y))` bounds its suboptimality.
pub fn kl_constrained_backup(w: &[f64], reference: &[f64], c: f64, tol: f64) -> Result<CtBackupResult> {
    check_len(w, reference)?;
    if !(c >= 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument("need c >= 0 and tol > 0".into()));
    }
    if c == 0.0 {
        return Ok(CtBackupResult::exact(dot(w, reference), reference.to_vec(), None));
    }
    let (top, wc, range) = center(w);
    if range == 0.0 {
        return Ok(CtBackupResult::exact(w[0], reference.to_vec(), Some(0.0)));
    }
    let (mass, restricted) = restrict_to_argmax(&wc, reference);
    if c >= -mass.ln() {
        return Ok(CtBackupResult::exact(top, restricted, Some(0.0)));
    }

    let mut evaluations = 0;
    let mut tilt = |y: f64| {
        evaluations += 1;
        let scaled: Vec<f64> = wc.iter().map(|x| x / y).collect();
        let p = weighted_softmax(&scaled, reference);
        let kl = kl_divergence(&p, reference);
        (p, kl)
    };

    let mut hi = range;
    let (mut p_hi, mut kl_hi) = tilt(hi);
    while kl_hi > c {
        hi *= 2.0;
        (p_hi, kl_hi) = tilt(hi);
    }
    let mut lo = 1e-8 * range;
    for _ in 0..1100 {
        if tilt(lo).1 >= c {
            break;
        }
        lo *= 0.5;
    }

    for _ in 0..500 {
        if hi * (c - kl_hi) <= tol {
            break;
        }
        let mid = if hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        let (p, kl) = tilt(mid);
        if kl <= c {
            hi = mid;
            p_hi = p;
            kl_hi = kl;
        } else {
            lo = mid;
        }
    }
    Ok(CtBackupResult {
        value: top + dot(&wc, &p_hi),
        policy: p_hi,
        multiplier: Some(hi),
        gap: hi * (c - kl_hi),
        evaluations,
    })
}

/// The KL dual objective `c y + y ln sum ref_a exp(w_a / y)` at `y > 0`.
pub fn kl_dual_objective(w: &[f64], reference: &[f64], c: f64, y: f64) -> f64 {
    let scaled: Vec<f64> = w.iter().map(|x| x / y).collect();
    c * y + y * crate::numeric::weighted_logsumexp(&scaled, reference)
}

/// `max w.pi` over `||pi - reference||_1 <= c`: move `min(c/2, 1 - ref_top)`
/// onto the (lowest-index) best action, taking it from the worst actions first.
pub fn l1_constrained_backup(w: &[f64], reference: &[f64], c: f64) -> Result<CtBackupResult> {
    check_len(w, reference)?;
    if !(0.0..=2.0).contains(&c) {
        return Err(Error::InvalidArgument(format!("l1 radius must lie in [0, 2], got {c}")));
    }
    let best = argmax(w);
    let mut pi = reference.to_vec();
    let mut budget = (0.5 * c).min(1.0 - reference[best]);
    pi[best] += budget;
    let mut order: Vec<usize> = (0..w.len()).filter(|a| *a != best).collect();
    order.sort_by(|a, b| w[*a].total_cmp(&w[*b]));
    for a in order {
        if budget <= 0.0 {
            break;
        }
        let take = pi[a].min(budget);
        pi[a] -= take;
        budget -= take;
    }
    Ok(CtBackupResult::exact(dot(w, &pi), pi, None))
}

/// The printed L1 dual `w.ref + (c/2) min_{mu >= 0} (max(w + mu) - min(w + mu))`.
/// Lifting every entry to `max w` makes the range zero, so this is `w.ref`.
pub fn l1_printed_dual(w: &[f64], reference: &[f64], c: f64) -> f64 {
    let top = max_of(w);
    let lifted: Vec<f64> = w.iter().map(|_| top).collect();
    dot(w, reference) + 0.5 * c * (max_of(&lifted) - min_of(&lifted))
}

/// Stationary row `ref_a max(0, 1 + t (w_a - nu))` normalised through `nu`.
fn l2_threshold_policy(w: &[f64], reference: &[f64], t: f64) -> Vec<f64> {
    if t == 0.0 {
        return reference.to_vec();
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|a, b| w[*b].total_cmp(&w[*a]));
    let mut mass = 0.0;
    let mut weighted = 0.0;
    let mut nu = 0.0;
    for (k, &a) in order.iter().enumerate() {
        mass += reference[a];
        weighted += reference[a] * w[a];
        nu = (mass + t * weighted - 1.0) / (t * mass);
        let next_out = order.get(k + 1).is_none_or(|&b| 1.0 + t * (w[b] - nu) <= 0.0);
        if next_out {
            break;
        }
    }
    let raw: Vec<f64> = w
        .iter()
        .zip(reference)
        .map(|(x, p)| p * (1.0 + t * (x - nu)).max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// `max w.pi` over `sum (pi_a - ref_a)^2 / ref_a <= c`.
///
/// Stationarity gives `pi_a = ref_a max(0, 1 + t (w_a - nu))` with
/// `t = 1 / (2 lambda)`; the chi-square of that row increases with `t`, so
/// `t` is found by bisection. The feasible end is returned with
/// `gap = lambda (c - chi2)`.
pub fn l2_constrained_backup(w: &[f64], reference: &[f64], c: f64, tol: f64) -> Result<CtBackupResult> {
    check_len(w, reference)?;
    if !(c >= 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument("need c >= 0 and tol > 0".into()));
    }
    if c == 0.0 {
        return Ok(CtBackupResult::exact(dot(w, reference), reference.to_vec(), None));
    }
    let (top, wc, range) = center(w);
    if range == 0.0 {
        return Ok(CtBackupResult::exact(w[0], reference.to_vec(), Some(0.0)));
    }
    let (mass, restricted) = restrict_to_argmax(&wc, reference);
    if c >= (1.0 - mass) / mass {
        return Ok(CtBackupResult::exact(top, restricted, Some(0.0)));
    }

    let mut evaluations = 0;
    let mut eval = |t: f64| {
        evaluations += 1;
        let p = l2_threshold_policy(&wc, reference, t);
        let chi = chi_square(&p, reference);
        (p, chi)
    };
    let mut hi = 1.0 / range;
    while eval(hi).1 < c {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let (mut p_lo, mut chi_lo) = (reference.to_vec(), 0.0);
    for _ in 0..2000 {
        if lo > 0.0 && (c - chi_lo) / (2.0 * lo) <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (p, chi) = eval(mid);
        if chi <= c {
            lo = mid;
            p_lo = p;
            chi_lo = chi;
        } else {
            hi = mid;
        }
    }
    let lambda = if lo > 0.0 { 1.0 / (2.0 * lo) } else { f64::INFINITY };
    Ok(CtBackupResult {
        value: top + dot(&wc, &p_lo),
        policy: p_lo,
        multiplier: Some(lambda),
        gap: lambda * (c - chi_lo),
        evaluations,
    })
}

/// Bisects a nondecreasing `f` for `f(x) = target` on `[lo, hi]`, widening
/// `hi` until it brackets.
fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    while f(hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Euclidean projection onto `{x in simplex : sum (x_a - ref_a)^2 / ref_a <= c}`.
///
/// For a ball multiplier `mu` the problem is a separable quadratic over the
/// simplex, solved by `x_a = max(0, (y_a + 2 mu + tau) / (1 + 2 mu / ref_a))`
/// with `tau` fixing the sum; `mu` is then bisected to the ball boundary.
fn project_simplex_chi_ball(y: &[f64], reference: &[f64], c: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        let row = |tau: f64| -> Vec<f64> {
            y.iter()
                .zip(reference)
                .map(|(v, p)| ((v + 2.0 * mu + tau) / (1.0 + 2.0 * mu / p)).max(0.0))
                .collect()
        };
        let sum = |tau: f64| row(tau).iter().sum::<f64>();
        // sum is nondecreasing in tau; bracket below with the largest shift
        let lo = -y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 2.0 * mu;
        let tau = bisect_increasing(sum, 1.0, lo, lo.abs().max(1.0) + 1.0);
        let x = row(tau);
        let total: f64 = x.iter().sum();
        x.into_iter().map(|v| v / total).collect()
    };
    let free = at(0.0);
    if chi_square(&free, reference) <= c {
        return free;
    }
    // chi-square of the projection shrinks as mu grows
    let mu = bisect_increasing(|m| -chi_square(&at(m), reference), -c, 0.0, 1.0);
    at(mu)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedAscent {
    pub value: f64,
    pub policy: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient ascent for the chi-square ball, with exact projections
/// onto the ball-simplex intersection. An independent route to [`l2_constrained_backup`].
pub fn l2_projected_ascent(w: &[f64], reference: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<ProjectedAscent> {
    check_len(w, reference)?;
    let (top, wc, range) = center(w);
    if range == 0.0 || c == 0.0 {
        return Ok(ProjectedAscent {
            value: dot(w, reference),
            policy: reference.to_vec(),
            iterations: 0,
            converged: true,
        });
    }
    let step = 0.5 / range;
    let mut pi = reference.to_vec();
    for it in 1..=max_iter {
        let y: Vec<f64> = pi.iter().zip(&wc).map(|(p, g)| p + step * g).collect();
        let next = project_simplex_chi_ball(&y, reference, c);
        let moved = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if moved < tol {
            return Ok(ProjectedAscent {
                value: top + dot(&wc, &pi),
                policy: pi,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(ProjectedAscent {
        value: top + dot(&wc, &pi),
        policy: pi,
        iterations: max_iter,
        converged: false,
    })
}

/// The printed chi-square dual
/// `min_{mu >= 0} sum ref_a (w_a + mu_a) + sqrt(c sum ref_a (w_a + mu_a)^2)`,
/// minimised over `x = w + mu >= w` by projected gradient descent.
pub fn l2_printed_dual(w: &[f64], reference: &[f64], c: f64) -> f64 {
    let objective = |x: &[f64]| -> f64 {
        let sq: f64 = x.iter().zip(reference).map(|(v, p)| p * v * v).sum();
        dot(x, reference) + (c * sq).sqrt()
    };
    let mut x = w.to_vec();
    let mut f = objective(&x);
    let mut step = 1.0;
    for _ in 0..10_000 {
        let sq: f64 = x.iter().zip(reference).map(|(v, p)| p * v * v).sum();
        let root = (c * sq).sqrt();
        let grad: Vec<f64> = x
            .iter()
            .zip(reference)
            .map(|(v, p)| p + if root > 0.0 { c * p * v / root } else { 0.0 })
            .collect();
        let mut improved = false;
        while step > 1e-16 {
            let cand: Vec<f64> = x
                .iter()
                .zip(&grad)
                .zip(w)
                .map(|((v, g), lo)| (v - step * g).max(*lo))
                .collect();
            let fc = objective(&cand);
            if fc < f - 1e-15 * f.abs().max(1.0) {
                x = cand;
                f = fc;
                step *= 2.0;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    f
}

/// `max w.pi` over `{-phi(pi) <= level}` by bisection on the multiplier
/// `lambda` of `max w.pi + lambda phi(pi)`.
///
/// The reported value is the dual `max_pi w.pi + lambda (phi(pi) + level)`
/// at the returned multiplier. It exceeds the optimum by at most `gap`, and
/// unlike `w.pi` it inherits the conjugate solver's objective accuracy
/// rather than its (square-root) policy accuracy.
pub fn sublevel_backup(w: &[f64], phi: &Arc<dyn Regularizer>, level: f64, opts: &CtOptions) -> Result<CtBackupResult> {
    let vertex = standard_backup(w);
    if -phi.value(&vertex.policy) <= level {
        return Ok(CtBackupResult::exact(vertex.value, vertex.policy, Some(0.0)));
    }
    let mut evaluations = 0;
    let mut solve = |lambda: f64| -> Result<(Backup, f64)> {
        evaluations += 1;
        let scaled = Scaled {
            inner: phi.clone(),
            factor: lambda,
        };
        let b = conjugate_backup(w, &scaled, &opts.conjugate)?;
        let slack = phi.value(&b.policy) + level;
        Ok((
            Backup {
                value: b.value + lambda * level,
                policy: b.policy,
            },
            slack,
        ))
    };
    // bracket: `hi` feasible, `lo` infeasible
    let mut hi = 1.0;
    let mut grow = 0;
    while solve(hi)?.1 < 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::Numerical(format!("sublevel set of {} looks empty", phi.name())));
        }
    }
    let mut lo = 0.5 * hi;
    for _ in 0..200 {
        if solve(lo)?.1 < 0.0 {
            break;
        }
        hi = lo;
        lo *= 0.5;
    }
    let (mut best, mut slack_hi) = solve(hi)?;
    for _ in 0..200 {
        if hi * slack_hi <= opts.tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (b, slack) = solve(mid)?;
        if slack >= 0.0 {
            hi = mid;
            best = b;
            slack_hi = slack;
        } else {
            lo = mid;
        }
    }
    Ok(CtBackupResult {
        value: best.value,
        policy: best.policy,
        multiplier: Some(hi),
        gap: hi * slack_hi,
        evaluations,
    })
}

/// Dispatches to the specialised solver for `set`.
pub fn ct_backup(w: &[f64], set: &ConstraintSet, opts: &CtOptions) -> Result<CtBackupResult> {
    match set {
        ConstraintSet::KlBall { reference, radius } => kl_constrained_backup(w, reference, *radius, opts.tol),
        ConstraintSet::L1Ball { reference, radius } => l1_constrained_backup(w, reference, *radius),
        ConstraintSet::L2Ball { reference, radius } => l2_constrained_backup(w, reference, *radius, opts.tol),
        ConstraintSet::Singleton { row } => {
            check_len(w, row)?;
            Ok(CtBackupResult::exact(dot(w, row), row.clone(), None))
        }
        ConstraintSet::Full => {
            let b = standard_backup(w);
            Ok(CtBackupResult::exact(b.value, b.policy, None))
        }
        ConstraintSet::Sublevel { phi, level } => sublevel_backup(w, phi, *level, opts),
    }
}

/// Exhaustive search over a barycentric grid (plus the set's anchor point).
pub fn grid_oracle_backup(w: &[f64], set: &ConstraintSet, resolution: usize) -> Result<Backup> {
    let n = w.len();
    if !(1..=3).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "grid oracle supports |A| <= 3, got {n}"
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let mut best: Option<Backup> = None;
    let mut consider = |pi: Vec<f64>| {
        if set.violation(&pi) <= 1e-12 {
            let v = dot(w, &pi);
            if best.as_ref().is_none_or(|b| v > b.value) {
                best = Some(Backup { value: v, policy: pi });
            }
        }
    };
    consider(set.anchor(n));
    let res = resolution as f64;
    match n {
        1 => consider(vec![1.0]),
        2 => (0..=resolution).for_each(|i| consider(vec![i as f64 / res, (resolution - i) as f64 / res])),
        _ => {
            for i in 0..=resolution {
                for j in 0..=resolution - i {
                    let (a, b) = (i as f64 / res, j as f64 / res);
                    consider(vec![a, b, (1.0 - a - b).max(0.0)]);
                }
            }
        }
    }
    best.ok_or_else(|| Error::Numerical("no feasible grid point".into()))
}

/// Constrained Bellman operator, one set per state.
#[derive(Debug, Clone)]
pub struct CtBackup {
    sets: Vec<ConstraintSet>,
    opts: CtOptions,
}

impl CtBackup {
    pub fn new(sets: Vec<ConstraintSet>) -> Self {
        Self {
            sets,
            opts: CtOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: CtOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn sets(&self) -> &[ConstraintSet] {
        &self.sets
    }

    pub fn backup_with_certificate(&self, state: usize, w: &[f64]) -> Result<CtBackupResult> {
        let set = self.sets.get(state).ok_or(Error::IndexOutOfRange {
            index: state,
            len: self.sets.len(),
        })?;
        ct_backup(w, set, &self.opts)
    }
}

pub fn ct_backup_operator(sets: Vec<ConstraintSet>) -> CtBackup {
    CtBackup::new(sets)
}

impl BackupOperator for CtBackup {
    fn backup(&self, state: usize, w: &[f64]) -> Result<Backup> {
        Ok(self.backup_with_certificate(state, w)?.into_backup())
    }

    fn name(&self) -> String {
        match self.sets.first() {
            Some(s) => format!("constrained[{}]", s.kind()),
            None => "constrained[]".into(),
        }
    }
}

/// A regularized model written as a constrained one.
#[derive(Debug, Clone)]
pub struct RToCtConversion {
    /// Same tuple with rewards `r_sa - c_s`.
    pub model: MdpModel,
    /// `c_s = -phi_s(pi*_s)`.
    pub constants: Vec<f64>,
    pub sets: Vec<ConstraintSet>,
    /// The regularized solution the constants were read from.
    pub source: SolveResult,
}

/// Solves the regularized model, sets `c_s = -phi_s(pi*_s)` and builds
/// `D_s = {pi : -phi_s(pi) <= c_s}` with rewards shifted by `-c_s`.
/// KL-type regularizers become KL balls; anything else stays a sublevel set.
pub fn r_to_ct_convert(
    model: &MdpModel,
    phis: Vec<Arc<dyn Regularizer>>,
    opts: &SolveOptions,
    conjugate: ConjugateOptions,
) -> Result<RToCtConversion> {
    let (ns, na) = (model.num_states(), model.num_actions());
    if phis.len() != ns {
        return Err(Error::ShapeMismatch(format!(
            "{} regularizers for {ns} states",
            phis.len()
        )));
    }
    let op = RegularizedBackup::new(phis.clone()).with_options(conjugate);
    let source = value_iteration(model, &op, opts)?;
    let mut constants = Vec::with_capacity(ns);
    let mut sets = Vec::with_capacity(ns);
    for (s, phi) in phis.into_iter().enumerate() {
        let c = -phi.value(source.policy.row(s));
        constants.push(c);
        sets.push(match phi.kl_form(na) {
            Some(KlForm {
                eta,
                reference,
                constant,
            }) => ConstraintSet::KlBall {
                reference,
                radius: ((c + constant) / eta).max(0.0),
            },
            None => ConstraintSet::Sublevel { phi, level: c },
        });
    }
    let reward: Vec<f64> = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| model.reward(s, a) - constants[s])
        .collect();
    Ok(RToCtConversion {
        model: model.with_rewards(reward)?,
        constants,
        sets,
        source,
    })
}

/// Constraint function in a Lagrange penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Kl,
    ChiSquare,
}

/// `phi(pi) = -lambda (l(pi) - c)` for `l` a KL or chi-square divergence
/// from `reference`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangePenalty {
    pub kind: PenaltyKind,
    pub reference: Vec<f64>,
    pub radius: f64,
    pub multiplier: f64,
}

impl LagrangePenalty {
    pub fn constraint(&self, pi: &[f64]) -> f64 {
        match self.kind {
            PenaltyKind::Kl => kl_divergence(pi, &self.reference),
            PenaltyKind::ChiSquare => chi_square(pi, &self.reference),
        }
    }
}

impl Regularizer for LagrangePenalty {
    fn value(&self, pi: &[f64]) -> f64 {
        if self.multiplier == 0.0 {
            return 0.0;
        }
        -self.multiplier * (self.constraint(pi) - self.radius)
    }

    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        let lam = self.multiplier;
        pi.iter()
            .zip(&self.reference)
            .map(|(p, r)| match self.kind {
                PenaltyKind::Kl => -lam * ((p / r).ln() + 1.0),
                PenaltyKind::ChiSquare => -lam * 2.0 * (p - r) / r,
            })
            .collect()
    }

    fn closed_form(&self, w: &[f64]) -> Option<ConjugateResult> {
        let lam = self.multiplier;
        if lam == 0.0 {
            return Some(standard_backup(w));
        }
        match self.kind {
            PenaltyKind::Kl => kl_backup(w, lam, &self.reference).ok().map(|b| Backup {
                value: b.value + lam * self.radius,
                policy: b.policy,
            }),
            PenaltyKind::ChiSquare => {
                let (top, wc, _) = center(w);
                let pi = l2_threshold_policy(&wc, &self.reference, 1.0 / (2.0 * lam));
                let value = top + dot(&wc, &pi) - lam * (chi_square(&pi, &self.reference) - self.radius);
                Some(Backup { value, policy: pi })
            }
        }
    }

    fn kl_form(&self, num_actions: usize) -> Option<KlForm> {
        (self.kind == PenaltyKind::Kl && self.multiplier > 0.0 && num_actions == self.reference.len()).then(|| KlForm {
            eta: self.multiplier,
            reference: self.reference.clone(),
            constant: self.multiplier * self.radius,
        })
    }

    fn name(&self) -> String {
        let k = match self.kind {
            PenaltyKind::Kl => "kl",
            PenaltyKind::ChiSquare => "chi2",
        };
        format!("lagrange[{k}](lambda={})", self.multiplier)
    }
}

/// A constrained model written as a regularized one.
#[derive(Debug, Clone)]
pub struct LagrangeConversion {
    pub penalties: Vec<LagrangePenalty>,
    /// `lambda_s (l_s(pi*_s) - c_s)` at the constrained solution.
    pub slackness: Vec<f64>,
    pub source: SolveResult,
}

impl LagrangeConversion {
    pub fn multipliers(&self) -> Vec<f64> {
        self.penalties.iter().map(|p| p.multiplier).collect()
    }

    pub fn operator(&self) -> RegularizedBackup {
        RegularizedBackup::new(
            self.penalties
                .iter()
                .map(|p| Arc::new(p.clone()) as Arc<dyn Regularizer>)
                .collect(),
        )
    }
}

/// Solves the constrained model and reads each state's multiplier off the
/// dual at the fixed point. Needs a Slater point, so every radius must be
/// positive; only KL and chi-square balls are smooth single constraints.
pub fn ct_to_r_convert(
    model: &MdpModel,
    sets: &[ConstraintSet],
    opts: &SolveOptions,
    ct: &CtOptions,
) -> Result<LagrangeConversion> {
    if sets.len() != model.num_states() {
        return Err(Error::ShapeMismatch(format!(
            "{} sets for {} states",
            sets.len(),
            model.num_states()
        )));
    }
    for (s, set) in sets.iter().enumerate() {
        set.validate(model.num_actions())?;
        match set {
            ConstraintSet::KlBall { radius, .. } | ConstraintSet::L2Ball { radius, .. } => {
                if *radius == 0.0 {
                    return Err(Error::Precondition(format!(
                        "state {s}: radius 0 leaves no strictly feasible point, so no multiplier exists"
                    )));
                }
            }
            other => {
                return Err(Error::Precondition(format!(
                    "state {s}: {} is not a single smooth convex constraint",
                    other.kind()
                )))
            }
        }
    }
    let op = CtBackup::new(sets.to_vec()).with_options(*ct);
    let source = value_iteration(model, &op, opts)?;
    let mut penalties = Vec::with_capacity(sets.len());
    let mut slackness = Vec::with_capacity(sets.len());
    for (s, set) in sets.iter().enumerate() {
        let w = q_vector(model, &source.value.values, s)?;
        let cert = op.backup_with_certificate(s, &w)?;
        let (kind, reference, radius) = match set {
            ConstraintSet::KlBall { reference, radius } => (PenaltyKind::Kl, reference, radius),
            ConstraintSet::L2Ball { reference, radius } => (PenaltyKind::ChiSquare, reference, radius),
            _ => unreachable!("checked above"),
        };
        let penalty = LagrangePenalty {
            kind,
            reference: reference.clone(),
            radius: *radius,
            multiplier: cert.multiplier.unwrap_or(0.0),
        };
        slackness.push(penalty.multiplier * (penalty.constraint(&cert.policy) - radius));
        penalties.push(penalty);
    }
    Ok(LagrangeConversion {
        penalties,
        slackness,
        source,
    })
}

/// Rich-policy witness: the ER optimum at `s0` of the three-state model
/// as `r(a1|s0)` varies.
#[derive(Debug, Clone, Serialize)]
pub struct InteriorSweepWitness {
    pub rewards: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub distinct: bool,
    pub interior: bool,
}

impl InteriorSweepWitness {
    pub fn holds(&self) -> bool {
        self.distinct && self.interior
    }
}

pub fn er_interior_sweep(eta: f64, settings: usize, discount: f64) -> Result<InteriorSweepWitness> {
    let phi: Arc<dyn Regularizer> = Arc::new(crate::regularized::EntropyRegularizer::new(eta)?);
    let op = RegularizedBackup::broadcast(phi, 3);
    let rewards: Vec<f64> = (0..settings)
        .map(|i| -3.0 + 6.0 * i as f64 / (settings.max(2) - 1) as f64)
        .collect();
    let mut probabilities = Vec::with_capacity(settings);
    for r in &rewards {
        let m = crate::stochastic::three_state_model(*r, 0.0, discount)?;
        probabilities.push(value_iteration(&m, &op, &SolveOptions::default())?.policy.row(0)[0]);
    }
    let mut sorted = probabilities.clone();
    sorted.sort_by(f64::total_cmp);
    let distinct = sorted.windows(2).all(|p| p[1] - p[0] > 1e-9);
    let interior = probabilities.iter().all(|p| *p > 0.0 && *p < 1.0);
    Ok(InteriorSweepWitness {
        rewards,
        probabilities,
        distinct,
        interior,
    })
}

/// One candidate regularizer tested against the singleton policy.
#[derive(Debug, Clone, Serialize)]
pub struct BoundedPhiCheck {
    pub regularizer: String,
    pub lower: f64,
    pub upper: f64,
    /// `r(a2|s0) - r(a1|s0)` chosen as `upper - lower + 1`.
    pub reward_gap: f64,
    /// `pi(a1|s0)` of the regularized solve at that gap.
    pub probability: f64,
    pub refuted: bool,
}

/// Fixed-policy witness: a singleton constraint at `s0` keeps the policy
/// constant while values move with `r`, and any regularizer bounded on the
/// 2-simplex by `[L, U]` abandons that policy once the reward gap exceeds
/// `U - L`.
#[derive(Debug, Clone, Serialize)]
pub struct SingletonWitness {
    pub reward_gaps: Vec<f64>,
    pub ct_probabilities: Vec<f64>,
    pub ct_values: Vec<f64>,
    pub candidates: Vec<BoundedPhiCheck>,
}

impl SingletonWitness {
    pub fn holds(&self) -> bool {
        let constant = self.ct_probabilities.iter().all(|p| *p == 1.0);
        let moving = self.ct_values.windows(2).any(|v| v[0] != v[1]);
        constant && moving && self.candidates.iter().all(|c| c.refuted)
    }
}

pub fn singleton_witness(candidates: &[Arc<dyn Regularizer>], discount: f64) -> Result<SingletonWitness> {
    let sets = vec![
        ConstraintSet::Singleton { row: vec![1.0, 0.0] },
        ConstraintSet::Full,
        ConstraintSet::Full,
    ];
    let op = CtBackup::new(sets);
    let reward_gaps = vec![-2.0, 0.0, 0.5, 3.0, 10.0];
    let mut ct_probabilities = Vec::new();
    let mut ct_values = Vec::new();
    for gap in &reward_gaps {
        let m = crate::stochastic::three_state_model(1.0, 1.0 + gap, discount)?;
        let sol = value_iteration(&m, &op, &SolveOptions::default())?;
        ct_probabilities.push(sol.policy.row(0)[0]);
        ct_values.push(sol.value.values[0]);
    }
    // vary r(a1|s0) too, so the value genuinely moves with r
    let m = crate::stochastic::three_state_model(-4.0, 0.0, discount)?;
    let sol = value_iteration(&m, &op, &SolveOptions::default())?;
    ct_probabilities.push(sol.policy.row(0)[0]);
    ct_values.push(sol.value.values[0]);

    let mut checks = Vec::with_capacity(candidates.len());
    for phi in candidates {
        let grid = 10_000;
        let values: Vec<f64> = (0..=grid)
            .map(|i| {
                let p = i as f64 / grid as f64;
                phi.value(&[p, 1.0 - p])
            })
            .collect();
        let (lower, upper) = (min_of(&values), max_of(&values));
        let reward_gap = (upper - lower) + 1.0;
        let m = crate::stochastic::three_state_model(0.0, reward_gap, discount)?;
        let op = RegularizedBackup::broadcast(phi.clone(), 3);
        let p = value_iteration(&m, &op, &SolveOptions::default())?.policy.row(0)[0];
        checks.push(BoundedPhiCheck {
            regularizer: phi.name(),
            lower,
            upper,
            reward_gap,
            probability: p,
            refuted: p < 1.0 - 1e-9,
        });
    }
    Ok(SingletonWitness {
        reward_gaps,
        ct_probabilities,
        ct_values,
        candidates: checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularized::EntropyRegularizer;

    const TOL: f64 = 1e-12;

    #[test]
    fn kl_ball_examples() {
        let r = kl_constrained_backup(&[1.0, 0.0], &[0.5, 0.5], 0.0, TOL).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.policy, vec![0.5, 0.5]);
        // -ln(1/2) is enough to reach the vertex
        let r = kl_constrained_backup(&[1.0, 0.0], &[0.5, 0.5], 2f64.ln(), TOL).unwrap();
        assert_eq!(r.value, 1.0);
        let r = kl_constrained_backup(&[1.0, 0.0], &[0.5, 0.5], 0.1, TOL).unwrap();
        assert!(r.gap <= TOL);
        assert!(kl_divergence(&r.policy, &[0.5, 0.5]) <= 0.1 + 1e-12);
        let g = grid_oracle_backup(
            &[1.0, 0.0],
            &ConstraintSet::KlBall {
                reference: vec![0.5, 0.5],
                radius: 0.1,
            },
            100_000,
        )
        .unwrap();
        assert!((g.value - r.value).abs() < 1e-5);
        // evaluations stay logarithmic in 1/tol
        assert!(r.evaluations < 200, "{}", r.evaluations);
    }

    #[test]
    fn kl_dual_value_matches_primal() {
        let w = [0.3, -0.2, 1.4];
        let reference = [0.2, 0.5, 0.3];
        let r = kl_constrained_backup(&w, &reference, 0.2, TOL).unwrap();
        let y = r.multiplier.unwrap();
        assert!((kl_dual_objective(&w, &reference, 0.2, y) - r.value).abs() < 1e-10);
    }

    #[test]
    fn l1_ball_examples() {
        let r = l1_constrained_backup(&[1.0, 0.0], &[0.5, 0.5], 0.4).unwrap();
        assert!((r.policy[0] - 0.7).abs() < 1e-15 && (r.policy[1] - 0.3).abs() < 1e-15);
        assert!((r.value - 0.7).abs() < 1e-15);
        let r = l1_constrained_backup(&[1.0, 0.0, 2.0], &[0.2, 0.3, 0.5], 2.0).unwrap();
        assert_eq!(r.policy, vec![0.0, 0.0, 1.0]);
        assert_eq!(r.value, 2.0);
        let r = l1_constrained_backup(&[1.0, 0.0], &[0.5, 0.5], 0.0).unwrap();
        assert_eq!(r.policy, vec![0.5, 0.5]);
    }

    #[test]
    fn l1_printed_dual_collapses_to_reference_value() {
        let w = [1.0, 0.0];
        let reference = [0.5, 0.5];
        assert_eq!(l1_printed_dual(&w, &reference, 0.4), 0.5);
        assert!(l1_constrained_backup(&w, &reference, 0.4).unwrap().value > 0.5);
    }

    #[test]
    fn l2_ball_examples() {
        let reference = [0.5, 0.5];
        let r = l2_constrained_backup(&[1.0, 0.0], &reference, 0.0, TOL).unwrap();
        assert_eq!(r.policy, vec![0.5, 0.5]);
        let r = l2_constrained_backup(&[1.0, 0.0], &reference, 10.0, TOL).unwrap();
        assert_eq!(r.value, 1.0);
        let r = l2_constrained_backup(&[1.0, 0.0], &reference, 0.1, TOL).unwrap();
        // two actions: chi2 = 4 (p - 1/2)^2 = 0.1
        let oracle = 0.5 + 0.1f64.sqrt() / 2.0;
        assert!((r.value - oracle).abs() < 1e-12, "{}", r.value);
        let g = grid_oracle_backup(
            &[1.0, 0.0],
            &ConstraintSet::L2Ball {
                reference: reference.to_vec(),
                radius: 0.1,
            },
            100_000,
        )
        .unwrap();
        assert!((g.value - oracle).abs() < 1e-5);
    }

    #[test]
    fn l2_routes_agree() {
        let w = [0.4, 1.1, -0.3];
        let reference = [0.3, 0.3, 0.4];
        for c in [0.05, 0.3, 0.9] {
            let a = l2_constrained_backup(&w, &reference, c, TOL).unwrap();
            let b = l2_projected_ascent(&w, &reference, c, 1e-13, 10_000).unwrap();
            assert!((a.value - b.value).abs() < 1e-6, "c={c}: {} vs {}", a.value, b.value);
            assert!(chi_square(&a.policy, &reference) <= c + 1e-8);
        }
    }

    #[test]
    fn grid_oracle_trivial_cases() {
        let full = grid_oracle_backup(&[3.0, 1.0], &ConstraintSet::Full, 7).unwrap();
        assert_eq!(
            full,
            Backup {
                value: 3.0,
                policy: vec![1.0, 0.0]
            }
        );
        let row = vec![0.3, 0.7];
        let single = grid_oracle_backup(&[3.0, 1.0], &ConstraintSet::Singleton { row: row.clone() }, 10).unwrap();
        assert_eq!(single.policy, row);
        assert!(grid_oracle_backup(&[0.0; 4], &ConstraintSet::Full, 10).is_err());
    }

    #[test]
    fn entropy_sublevel_matches_kl_ball() {
        let phi: Arc<dyn Regularizer> = Arc::new(EntropyRegularizer::new(1.0).unwrap());
        let w = [0.5, -0.1, 0.2];
        let target = crate::regularized::entropy_backup(&w, 1.0).policy;
        let level = -phi.value(&target);
        let s = sublevel_backup(&w, &phi, level, &CtOptions::default()).unwrap();
        for (a, b) in s.policy.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{:?} vs {target:?}", s.policy);
        }
        let radius = level + 3f64.ln();
        let k = kl_constrained_backup(&w, &[1.0 / 3.0; 3], radius, TOL).unwrap();
        for (a, b) in k.policy.iter().zip(&target) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((k.multiplier.unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ct_to_r_rejects_degenerate_sets() {
        let m = crate::model::random_mdp(2, 2, 0.5, (-1.0, 1.0), 3).unwrap();
        let sets = vec![
            ConstraintSet::KlBall {
                reference: vec![0.5, 0.5],
                radius: 0.0
            };
            2
        ];
        let err = ct_to_r_convert(&m, &sets, &SolveOptions::default(), &CtOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        let sets = vec![
            ConstraintSet::L1Ball {
                reference: vec![0.5, 0.5],
                radius: 0.3
            };
            2
        ];
        assert!(ct_to_r_convert(&m, &sets, &SolveOptions::default(), &CtOptions::default()).is_err());
    }

    #[test]
    fn one_action_conversion_is_trivial() {
        let m = MdpModel::new(1, 1, vec![1.0], vec![2.0], 0.5).unwrap();
        let phi: Arc<dyn Regularizer> = Arc::new(EntropyRegularizer::new(1.0).unwrap());
        let conv = r_to_ct_convert(
            &m,
            vec![phi.clone()],
            &SolveOptions::default(),
            ConjugateOptions::default(),
        )
        .unwrap();
        assert_eq!(conv.constants, vec![-phi.value(&[1.0])]);
        assert_eq!(conv.source.policy.row(0), &[1.0]);
    }

    #[test]
    fn strictness_witnesses_hold() {
        let a = er_interior_sweep(1.0, 50, 0.9).unwrap();
        assert!(a.holds(), "{a:?}");
        let candidates: Vec<Arc<dyn Regularizer>> = vec![
            Arc::new(EntropyRegularizer::new(1.0).unwrap()),
            Arc::new(crate::regularized::ZeroRegularizer),
            Arc::new(crate::distributional::MarginalMomentModel::new(vec![1.0, 1.0]).unwrap()),
        ];
        let b = singleton_witness(&candidates, 0.9).unwrap();
        assert!(b.holds(), "{b:?}");
    }
}
