//! Stochastic-reward MDPs: noise samplers, Monte Carlo `E[max]` estimates,
//! the Gumbel (EV) closed form and the uniform-noise counterexample.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MdpModel;
use crate::numeric::{is_symmetric, max_of, psd_sqrt, EULER_GAMMA};
use crate::regularized::entropy_backup;
use crate::rng::{tagged_rng, StreamRng};
use crate::solver::{Backup, BackupOperator};

/// Minimum sample count for one-off estimates.
pub const MIN_SAMPLES: usize = 100;
/// Minimum sample count for the value-iteration operator.
pub const MIN_OPERATOR_SAMPLES: usize = 10_000;
/// Above this many stored noise entries the operator regenerates draws on
/// every call instead of caching them.
const CACHE_LIMIT: usize = 1 << 24;

/// Joint Gaussian noise with a fixed covariance per state.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    cov: Vec<DMatrix<f64>>,
    factor: Vec<DMatrix<f64>>,
}

impl GaussianNoise {
    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.cov
    }
}

/// Per-state noise `eps_s` on the Q-vector.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    /// Independent Gumbel entries with scale `eta` and location 0.
    GumbelIid {
        eta: f64,
    },
    /// Independent uniform entries; `bounds[s][a] = (lo, hi)`, `lo == hi`
    /// gives a constant.
    UniformPerEntry {
        bounds: Vec<Vec<(f64, f64)>>,
    },
    GaussianJoint(GaussianNoise),
}

impl NoiseModel {
    pub fn gumbel(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gumbel scale must be positive, got {eta}"
            )));
        }
        Ok(Self::GumbelIid { eta })
    }

    pub fn uniform(bounds: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        for (s, row) in bounds.iter().enumerate() {
            for (a, (lo, hi)) in row.iter().enumerate() {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidArgument(format!(
                        "uniform bounds at ({s},{a}) must satisfy lo <= hi"
                    )));
                }
            }
        }
        Ok(Self::UniformPerEntry { bounds })
    }

    /// Noise identically zero.
    pub fn zero(num_states: usize, num_actions: usize) -> Self {
        Self::UniformPerEntry {
            bounds: vec![vec![(0.0, 0.0); num_actions]; num_states],
        }
    }

    pub fn gaussian(cov: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut factor = Vec::with_capacity(cov.len());
        for (s, c) in cov.iter().enumerate() {
            if !is_symmetric(c, 1e-10) {
                return Err(Error::InvalidArgument(format!(
                    "covariance for state {s} is not symmetric within 1e-10"
                )));
            }
            let sym = (c + c.transpose()) * 0.5;
            let min_eig = sym.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "covariance for state {s} is not PSD (eigenvalue {min_eig:e})"
                )));
            }
            factor.push(psd_sqrt(&sym));
        }
        Ok(Self::GaussianJoint(GaussianNoise { cov, factor }))
    }

    /// Checks the noise against an `|S| x |A|` model.
    pub fn check_shape(&self, num_states: usize, num_actions: usize) -> Result<()> {
        let ok = match self {
            Self::GumbelIid { .. } => true,
            Self::UniformPerEntry { bounds } => {
                bounds.len() == num_states && bounds.iter().all(|r| r.len() == num_actions)
            }
            Self::GaussianJoint(g) => g.cov.len() == num_states && g.cov.iter().all(|c| c.nrows() == num_actions),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "noise model does not match {num_states} states x {num_actions} actions"
            )))
        }
    }

    /// Per-entry means, used by the Jensen bound.
    pub fn mean(&self, state: usize, num_actions: usize) -> Vec<f64> {
        match self {
            Self::GumbelIid { eta } => vec![eta * EULER_GAMMA; num_actions],
            Self::UniformPerEntry { bounds } => bounds[state].iter().map(|(l, h)| 0.5 * (l + h)).collect(),
            Self::GaussianJoint(_) => vec![0.0; num_actions],
        }
    }

    /// Fills `out` with one draw of `eps_state`.
    pub fn sample_into<R: Rng + ?Sized>(&self, state: usize, rng: &mut R, out: &mut [f64]) {
        match self {
            Self::GumbelIid { eta } => {
                let g = Gumbel::new(0.0, *eta).expect("validated scale");
                for o in out.iter_mut() {
                    *o = g.sample(rng);
                }
            }
            Self::UniformPerEntry { bounds } => {
                for (o, (lo, hi)) in out.iter_mut().zip(&bounds[state]) {
                    // always draw, so streams stay aligned across bound changes
                    let u: f64 = rng.random();
                    *o = if lo == hi { *lo } else { lo + (hi - lo) * u };
                }
            }
            Self::GaussianJoint(g) => {
                let f = &g.factor[state];
                let z: Vec<f64> = (0..out.len()).map(|_| StandardNormal.sample(rng)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|j| f[(i, j)] * z[j]).sum();
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmaxEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Running mean and variance (Welford).
#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn estimate(&self) -> EmaxEstimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        EmaxEstimate {
            mean: self.mean,
            std_error: (var / self.n as f64).sqrt(),
            samples: self.n,
        }
    }
}

fn check_samples(samples: usize, min: usize) -> Result<()> {
    if samples < min {
        return Err(Error::InvalidArgument(format!(
            "need at least {min} samples, got {samples}"
        )));
    }
    Ok(())
}

/// Max and lowest argmax of `w + eps`.
#[inline]
fn noisy_max(w: &[f64], eps: &[f64]) -> (f64, usize) {
    let mut best = w[0] + eps[0];
    let mut idx = 0;
    for a in 1..w.len() {
        let v = w[a] + eps[a];
        if v > best {
            best = v;
            idx = a;
        }
    }
    (best, idx)
}

/// `E[max_a (w_a + eps_a)]` with noise drawn by `draw`. The estimate is
/// computed on `w - max(w)` and shifted back, so adding a constant to `w`
/// shifts the estimate by that constant.
pub fn mc_emax_with<F>(w: &[f64], samples: usize, rng: &mut StreamRng, mut draw: F) -> Result<EmaxEstimate>
where
    F: FnMut(&mut StreamRng, &mut [f64]),
{
    check_samples(samples, MIN_SAMPLES)?;
    let shift = max_of(w);
    let centered: Vec<f64> = w.iter().map(|x| x - shift).collect();
    let mut eps = vec![0.0; w.len()];
    let mut acc = Moments::default();
    for _ in 0..samples {
        draw(rng, &mut eps);
        acc.push(noisy_max(&centered, &eps).0);
    }
    let mut est = acc.estimate();
    est.mean += shift;
    Ok(est)
}

fn state_rng(seed: u64, state: usize) -> StreamRng {
    tagged_rng(seed, &[state as u64])
}

/// Monte Carlo `E[max_a (w_a + eps_a)]` at `state`, stream `(seed, state)`.
pub fn mc_emax(w: &[f64], noise: &NoiseModel, state: usize, samples: usize, seed: u64) -> Result<EmaxEstimate> {
    let mut rng = state_rng(seed, state);
    mc_emax_with(w, samples, &mut rng, |rng, out| noise.sample_into(state, rng, out))
}

/// Empirical frequency of `argmax_a (w_a + eps_a)`, lowest index on ties.
pub fn mc_policy(w: &[f64], noise: &NoiseModel, state: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    check_samples(samples, MIN_SAMPLES)?;
    let mut rng = state_rng(seed, state);
    let mut eps = vec![0.0; w.len()];
    let mut counts = vec![0usize; w.len()];
    for _ in 0..samples {
        noise.sample_into(state, &mut rng, &mut eps);
        counts[noisy_max(w, &eps).1] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / samples as f64).collect())
}

/// EV backup under the mean-zero Gumbel convention.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvBackup {
    pub value: f64,
    pub policy: Vec<f64>,
    /// Gumbel location that makes the noise mean zero: `-eta * EULER_GAMMA`.
    /// A location-0 sampler overshoots `value` by `-location`.
    pub location: f64,
}

pub fn ev_backup(w: &[f64], eta: f64) -> Result<EvBackup> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let b = entropy_backup(w, eta);
    Ok(EvBackup {
        value: b.value,
        policy: b.policy,
        location: -eta * EULER_GAMMA,
    })
}

/// Closed-form EV operator.
#[derive(Debug, Clone, Copy)]
pub struct EvBackupOperator {
    pub eta: f64,
}

impl BackupOperator for EvBackupOperator {
    fn backup(&self, _state: usize, w: &[f64]) -> Result<Backup> {
        let b = ev_backup(w, self.eta)?;
        Ok(Backup {
            value: b.value,
            policy: b.policy,
        })
    }

    fn name(&self) -> String {
        format!("ev(eta={})", self.eta)
    }
}

/// Monte Carlo S-MDP operator with common random numbers: state `s` always
/// sees the same draws, so the operator is a fixed deterministic map.
#[derive(Debug, Clone)]
pub struct SmdpBackup {
    noise: NoiseModel,
    samples: usize,
    seed: u64,
    cache: Option<Vec<Vec<f64>>>,
    num_actions: usize,
}

impl SmdpBackup {
    pub fn new(noise: NoiseModel, num_states: usize, num_actions: usize, samples: usize, seed: u64) -> Result<Self> {
        check_samples(samples, MIN_OPERATOR_SAMPLES)?;
        noise.check_shape(num_states, num_actions)?;
        let cache = (num_states * num_actions * samples <= CACHE_LIMIT).then(|| {
            (0..num_states)
                .map(|s| {
                    let mut rng = state_rng(seed, s);
                    let mut buf = vec![0.0; samples * num_actions];
                    for chunk in buf.chunks_mut(num_actions) {
                        noise.sample_into(s, &mut rng, chunk);
                    }
                    buf
                })
                .collect()
        });
        Ok(Self {
            noise,
            samples,
            seed,
            cache,
            num_actions,
        })
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    fn scan(&self, state: usize, w: &[f64]) -> Result<(EmaxEstimate, Vec<f64>)> {
        if w.len() != self.num_actions {
            return Err(Error::ShapeMismatch(format!(
                "q-vector has {} entries, noise has {}",
                w.len(),
                self.num_actions
            )));
        }
        let shift = max_of(w);
        let centered: Vec<f64> = w.iter().map(|x| x - shift).collect();
        let mut acc = Moments::default();
        let mut counts = vec![0usize; w.len()];
        let mut visit = |eps: &[f64]| {
            let (v, a) = noisy_max(&centered, eps);
            acc.push(v);
            counts[a] += 1;
        };
        match &self.cache {
            Some(cache) => cache[state].chunks(self.num_actions).for_each(&mut visit),
            None => {
                let mut rng = state_rng(self.seed, state);
                let mut eps = vec![0.0; w.len()];
                for _ in 0..self.samples {
                    self.noise.sample_into(state, &mut rng, &mut eps);
                    visit(&eps);
                }
            }
        }
        let mut est = acc.estimate();
        est.mean += shift;
        let n = self.samples as f64;
        Ok((est, counts.into_iter().map(|c| c as f64 / n).collect()))
    }

    /// Monte Carlo standard error of the backup value at `(state, w)`.
    pub fn std_error(&self, state: usize, w: &[f64]) -> Result<f64> {
        Ok(self.scan(state, w)?.0.std_error)
    }

    pub fn estimate(&self, state: usize, w: &[f64]) -> Result<EmaxEstimate> {
        Ok(self.scan(state, w)?.0)
    }
}

impl BackupOperator for SmdpBackup {
    fn backup(&self, state: usize, w: &[f64]) -> Result<Backup> {
        let (est, policy) = self.scan(state, w)?;
        Ok(Backup {
            value: est.mean,
            policy,
        })
    }

    fn name(&self) -> String {
        format!("smdp(samples={})", self.samples)
    }
}

pub fn smdp_backup_operator(
    noise: NoiseModel,
    num_states: usize,
    num_actions: usize,
    samples: usize,
    seed: u64,
) -> Result<SmdpBackup> {
    SmdpBackup::new(noise, num_states, num_actions, samples, seed)
}

/// `pi(a1|s0) / pi(a2|s0)` in the three-state uniform-noise model, following
/// the printed case split with `d = r2 - r1 + beta`:
/// `0` for `d <= 0`, `inf` for `d >= 1`, `d / (1 - d)` otherwise.
///
/// The event `{eps >= d}` with `eps ~ U[0,1]` actually has odds `(1-d)/d`;
/// see [`uniform_counterexample_ratio_exact`].
pub fn uniform_counterexample_ratio(r1: f64, r2: f64, beta: f64) -> f64 {
    let d = r2 - r1 + beta;
    if d <= 0.0 {
        0.0
    } else if d >= 1.0 {
        f64::INFINITY
    } else {
        d / (1.0 - d)
    }
}

/// Odds of `{eps >= d}` against `{eps < d}` for `eps ~ U[0,1]`.
pub fn uniform_counterexample_ratio_exact(r1: f64, r2: f64, beta: f64) -> f64 {
    let d = r2 - r1 + beta;
    if d <= 0.0 {
        f64::INFINITY
    } else if d >= 1.0 {
        0.0
    } else {
        (1.0 - d) / d
    }
}

/// Three states: `s0` chooses between absorbing zero-reward states `s1`
/// (action 0) and `s2` (action 1); both absorbing states loop on either action.
pub fn three_state_model(r1: f64, r2: f64, discount: f64) -> Result<MdpModel> {
    let mut transition = vec![0.0; 3 * 2 * 3];
    let mut set = |s: usize, a: usize, t: usize| transition[(s * 2 + a) * 3 + t] = 1.0;
    set(0, 0, 1);
    set(0, 1, 2);
    for a in 0..2 {
        set(1, a, 1);
        set(2, a, 2);
    }
    let reward = vec![r1, r2, 0.0, 0.0, 0.0, 0.0];
    MdpModel::new(3, 2, transition, reward, discount)
}

/// `U[0,1]` on `(s0, a1)`, zero elsewhere.
pub fn three_state_noise() -> NoiseModel {
    let mut bounds = vec![vec![(0.0, 0.0); 2]; 3];
    bounds[0][0] = (0.0, 1.0);
    NoiseModel::UniformPerEntry { bounds }
}

/// Best Chebyshev fit of `ln ratio_i ~ offset - gap_i * x` over `x = 1/eta >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvRatioFit {
    pub inverse_eta: f64,
    pub offset: f64,
    /// Largest absolute log-ratio error at the best fit; `inf` if any ratio
    /// is 0 or infinite (EV policies are strictly interior).
    pub residual: f64,
}

/// Fits EV log-odds `-gap/eta + offset` to observed ratios. With
/// `free_offset = false` the offset is pinned to 0 (`beta = 0`). The
/// objective is convex piecewise-linear in `x`, so scanning its breakpoints
/// is exact.
pub fn fit_ev_ratios(gaps: &[f64], ratios: &[f64], free_offset: bool) -> EvRatioFit {
    let logs: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    if logs.iter().any(|l| !l.is_finite()) || gaps.is_empty() {
        return EvRatioFit {
            inverse_eta: f64::NAN,
            offset: f64::NAN,
            residual: f64::INFINITY,
        };
    }
    // line i in x: logs_i + gaps_i * x (the value offset must reproduce)
    let line = |i: usize, x: f64| logs[i] + gaps[i] * x;
    let eval = |x: f64| -> (f64, f64) {
        let vals: Vec<f64> = (0..logs.len()).map(|i| line(i, x)).collect();
        if free_offset {
            let (lo, hi) = (vals.iter().copied().fold(f64::INFINITY, f64::min), max_of(&vals));
            (0.5 * (hi - lo), 0.5 * (hi + lo))
        } else {
            (vals.iter().map(|v| v.abs()).fold(0.0, f64::max), 0.0)
        }
    };
    let mut candidates = vec![0.0];
    for i in 0..logs.len() {
        if gaps[i] != 0.0 {
            candidates.push(-logs[i] / gaps[i]);
        }
        for j in 0..i {
            let dg = gaps[i] - gaps[j];
            if dg != 0.0 {
                candidates.push((logs[j] - logs[i]) / dg);
            }
            let sg = gaps[i] + gaps[j];
            if !free_offset && sg != 0.0 {
                candidates.push(-(logs[i] + logs[j]) / sg);
            }
        }
    }
    let mut best = EvRatioFit {
        inverse_eta: 0.0,
        offset: 0.0,
        residual: f64::INFINITY,
    };
    for x in candidates.into_iter().filter(|x| x.is_finite() && *x >= 0.0) {
        let (res, off) = eval(x);
        if res < best.residual {
            best = EvRatioFit {
                inverse_eta: x,
                offset: off,
                residual: res,
            };
        }
    }
    best
}

/// Policy ratio `pi(a1|s0)/pi(a2|s0)` from a Monte Carlo S-MDP solve of the
/// three-state model. Only `s0` carries noise, and its Q-vector is `(r1, r2)`
/// for any discount, so a single backup suffices.
pub fn three_state_mc_ratio(r1: f64, r2: f64, samples: usize, seed: u64) -> Result<f64> {
    let p = mc_policy(&[r1, r2], &three_state_noise(), 0, samples, seed)?;
    Ok(if p[1] == 0.0 { f64::INFINITY } else { p[0] / p[1] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::logsumexp;

    #[test]
    fn degenerate_noise_is_exact() {
        let noise = NoiseModel::zero(1, 3);
        let e = mc_emax(&[1.0, 4.0, -2.0], &noise, 0, 1000, 1).unwrap();
        assert_eq!(e.mean, 4.0);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(
            mc_policy(&[1.0, 4.0, -2.0], &noise, 0, 1000, 1).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn too_few_samples_rejected() {
        let noise = NoiseModel::gumbel(1.0).unwrap();
        assert!(matches!(
            mc_emax(&[0.0], &noise, 0, 99, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(SmdpBackup::new(noise, 1, 1, 9_999, 1).is_err());
    }

    #[test]
    fn gumbel_emax_matches_logsumexp() {
        let noise = NoiseModel::gumbel(1.0).unwrap();
        let e = mc_emax(&[0.0, 0.0], &noise, 0, 1_000_000, 3).unwrap();
        let oracle = 2f64.ln() + EULER_GAMMA;
        assert!((e.mean - oracle).abs() <= 3.0 * e.std_error, "{e:?}");
        assert!((oracle - 1.270363).abs() < 1e-6);
    }

    #[test]
    fn uniform_single_entry_mean() {
        let noise = NoiseModel::uniform(vec![vec![(0.0, 1.0), (0.0, 0.0)]]).unwrap();
        let e = mc_emax(&[5.0, 0.0], &noise, 0, 100_000, 4).unwrap();
        assert!((e.mean - 5.5).abs() <= 3.0 * e.std_error);
    }

    #[test]
    fn gumbel_policy_is_softmax() {
        let noise = NoiseModel::gumbel(1.0).unwrap();
        let n = 1_000_000;
        let p = mc_policy(&[1.0, 0.0], &noise, 0, n, 5).unwrap();
        let oracle = entropy_backup(&[1.0, 0.0], 1.0).policy;
        for (a, b) in p.iter().zip(&oracle) {
            assert!((a - b).abs() <= 4.0 / (n as f64).sqrt());
        }
        let p = mc_policy(&[0.0, 0.0], &noise, 0, n, 6).unwrap();
        assert!((p[0] - 0.5).abs() <= 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn ev_backup_location_convention() {
        let b = ev_backup(&[0.0, 0.0], 2.0).unwrap();
        assert!((b.value - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(b.location, -2.0 * EULER_GAMMA);
        let w = [0.3, -1.2, 0.7];
        let eta = 0.8;
        let e = mc_emax(&w, &NoiseModel::gumbel(eta).unwrap(), 0, 500_000, 8).unwrap();
        let ev = ev_backup(&w, eta).unwrap();
        assert!((e.mean + ev.location - ev.value).abs() <= 3.0 * e.std_error);
        assert!((ev.value - eta * logsumexp(&[w[0] / eta, w[1] / eta, w[2] / eta])).abs() < 1e-14);
    }

    #[test]
    fn printed_case_split() {
        assert_eq!(uniform_counterexample_ratio(0.0, 0.0, 0.5), 1.0);
        assert_eq!(uniform_counterexample_ratio(0.1, 0.0, 0.0), 0.0);
        assert!((uniform_counterexample_ratio(0.0, 0.25, 0.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(uniform_counterexample_ratio(0.0, 1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn monte_carlo_gives_complementary_odds() {
        // the printed middle branch is the reciprocal of the simulated odds
        for d in [0.25, 0.5, 0.75] {
            let mc = three_state_mc_ratio(0.0, d, 1_000_000, 12).unwrap();
            let exact = uniform_counterexample_ratio_exact(0.0, d, 0.0);
            let printed = uniform_counterexample_ratio(0.0, d, 0.0);
            assert!((mc / exact - 1.0).abs() < 0.02, "d={d}: {mc} vs {exact}");
            assert!((exact * printed - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_single_eta_fits_the_ratio_pair() {
        let gaps = [0.25, 0.75];
        let printed = [1.0 / 3.0, 3.0];
        let fit = fit_ev_ratios(&gaps, &printed, false);
        assert!(fit.residual >= 3f64.ln() - 1e-12, "{fit:?}");
        let simulated = [3.0, 1.0 / 3.0];
        assert!(fit_ev_ratios(&gaps, &simulated, false).residual > 1e-6);
        // zero odds cannot come from a softmax
        assert_eq!(fit_ev_ratios(&[1.5], &[0.0], true).residual, f64::INFINITY);
    }

    #[test]
    fn ev_fit_recovers_softmax_odds() {
        let eta: f64 = 0.7;
        let gaps = [0.1, 0.4, 0.9];
        let ratios: Vec<f64> = gaps.iter().map(|g| (0.3 - g / eta).exp()).collect();
        let fit = fit_ev_ratios(&gaps, &ratios, true);
        assert!(fit.residual < 1e-12);
        assert!((fit.inverse_eta - 1.0 / eta).abs() < 1e-9);
        assert!((fit.offset - 0.3).abs() < 1e-9);
    }

    #[test]
    fn smdp_zero_noise_is_standard() {
        use crate::model::random_mdp;
        use crate::solver::{value_iteration, SolveOptions, StandardBackup};
        let m = random_mdp(4, 3, 0.8, (-1.0, 1.0), 2).unwrap();
        let op = SmdpBackup::new(NoiseModel::zero(4, 3), 4, 3, 10_000, 1).unwrap();
        let opts = SolveOptions::default();
        let a = value_iteration(&m, &op, &opts).unwrap();
        let b = value_iteration(&m, &StandardBackup, &opts).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn translation_under_common_numbers() {
        let noise = NoiseModel::gumbel(0.5).unwrap();
        let w = [0.2, -0.4, 1.1];
        let shifted: Vec<f64> = w.iter().map(|x| x + 3.0).collect();
        let a = mc_emax(&w, &noise, 2, 10_000, 9).unwrap();
        let b = mc_emax(&shifted, &noise, 2, 10_000, 9).unwrap();
        assert!((b.mean - a.mean - 3.0).abs() < 1e-12);
        assert!((a.std_error - b.std_error).abs() <= 1e-15 * a.std_error);
    }
}
