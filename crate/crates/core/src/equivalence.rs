//! Randomised equivalence checks between framework instances and the
//! nested-relation suite.
//!
//! Two instances on the same tuple are equivalent with offset `alpha` when
//! solving `x` under rewards `r` and `y` under `r - alpha` gives the same
//! values and policies for every `r`. A finite set of trials can only refute
//! that claim or fail to; "consistent" means "not refuted over N trials".

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::constrained::{er_interior_sweep, singleton_witness, ConstraintSet, CtBackup};
use crate::distributional::{
    AmbiguitySet, CovarianceModel, DsBackup, MarginalDistributionModel, MarginalFamily, MarginalMomentModel,
};
use crate::error::{Error, Result};
use crate::model::{q_vector, random_mdp, MdpModel, Policy};
use crate::numeric::EULER_GAMMA;
use crate::regularized::{EntropyRegularizer, RegularizedBackup, Regularizer, ZeroRegularizer};
use crate::rng::tagged_rng;
use crate::solver::{value_iteration, BackupOperator, SolveOptions, StandardBackup};
use crate::stochastic::{
    fit_ev_ratios, mc_policy, three_state_noise, uniform_counterexample_ratio, uniform_counterexample_ratio_exact,
    EvBackupOperator, NoiseModel, SmdpBackup,
};

/// Which framework an instance solves under.
#[derive(Debug, Clone)]
pub enum Framework {
    Standard,
    Regularized(Vec<Arc<dyn Regularizer>>),
    /// Closed-form Gumbel-noise model (mean-zero convention).
    ExtremeValue {
        eta: f64,
    },
    /// Monte Carlo stochastic-reward model.
    Stochastic {
        noise: NoiseModel,
        samples: usize,
        seed: u64,
    },
    Distributional(Vec<AmbiguitySet>),
    Constrained(Vec<ConstraintSet>),
}

impl Framework {
    pub fn label(&self) -> String {
        match self {
            Self::Standard => "standard".into(),
            Self::Regularized(phis) => format!("regularized[{}]", phis.first().map(|p| p.name()).unwrap_or_default()),
            Self::ExtremeValue { eta } => format!("extreme_value(eta={eta})"),
            Self::Stochastic { samples, .. } => format!("stochastic(samples={samples})"),
            Self::Distributional(sets) => {
                format!(
                    "distributional[{}]",
                    sets.first().map(|s| s.family()).unwrap_or_default()
                )
            }
            Self::Constrained(sets) => format!("constrained[{}]", sets.first().map(|s| s.kind()).unwrap_or_default()),
        }
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self, Self::Stochastic { .. })
    }
}

/// A framework on a concrete tuple.
#[derive(Debug, Clone)]
pub struct FrameworkInstance {
    pub model: MdpModel,
    pub framework: Framework,
}

/// Backup operator built once and reused across reward settings.
enum Built {
    Plain(Box<dyn BackupOperator>),
    MonteCarlo(SmdpBackup),
}

impl Built {
    fn op(&self) -> &dyn BackupOperator {
        match self {
            Self::Plain(b) => b.as_ref(),
            Self::MonteCarlo(m) => m,
        }
    }
}

/// Solution plus the Monte Carlo value and policy tolerances it carries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSolution {
    pub value: Vec<f64>,
    pub policy: Policy,
    pub iterations: usize,
    /// Final sup-norm step of value iteration.
    pub residual: f64,
    /// Bound on the Monte Carlo error of the value, `max_s se_s / (1 - gamma)`.
    pub value_std_error: f64,
    /// Per-entry policy sampling error scale `1 / sqrt(samples)`.
    pub policy_std_error: f64,
}

impl FrameworkInstance {
    pub fn new(model: MdpModel, framework: Framework) -> Result<Self> {
        let inst = Self { model, framework };
        inst.check()?;
        Ok(inst)
    }

    fn check(&self) -> Result<()> {
        let (ns, na) = (self.model.num_states(), self.model.num_actions());
        let count = |n: usize, what: &str| -> Result<()> {
            if n != ns {
                return Err(Error::ShapeMismatch(format!("{n} {what} for {ns} states")));
            }
            Ok(())
        };
        match &self.framework {
            Framework::Standard => Ok(()),
            Framework::ExtremeValue { eta } => {
                if *eta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("eta must be positive".into()))
                }
            }
            Framework::Regularized(p) => count(p.len(), "regularizers"),
            Framework::Stochastic { noise, .. } => noise.check_shape(ns, na),
            Framework::Distributional(sets) => {
                count(sets.len(), "ambiguity sets")?;
                match sets.iter().find(|s| s.num_actions() != na) {
                    Some(s) => Err(Error::ShapeMismatch(format!(
                        "ambiguity set has {} actions, model has {na}",
                        s.num_actions()
                    ))),
                    None => Ok(()),
                }
            }
            Framework::Constrained(sets) => {
                count(sets.len(), "constraint sets")?;
                sets.iter().try_for_each(|s| s.validate(na))
            }
        }
    }

    fn build(&self) -> Result<Built> {
        let (ns, na) = (self.model.num_states(), self.model.num_actions());
        Ok(match &self.framework {
            Framework::Standard => Built::Plain(Box::new(StandardBackup)),
            Framework::Regularized(p) => Built::Plain(Box::new(RegularizedBackup::new(p.clone()))),
            Framework::ExtremeValue { eta } => Built::Plain(Box::new(EvBackupOperator { eta: *eta })),
            Framework::Stochastic { noise, samples, seed } => {
                Built::MonteCarlo(SmdpBackup::new(noise.clone(), ns, na, *samples, *seed)?)
            }
            Framework::Distributional(sets) => Built::Plain(Box::new(DsBackup::new(sets.clone()))),
            Framework::Constrained(sets) => Built::Plain(Box::new(CtBackup::new(sets.clone()))),
        })
    }

    /// Solves the instance under its own rewards.
    pub fn solve(&self, opts: &SolveOptions) -> Result<InstanceSolution> {
        solve_built(&self.build()?, &self.model, opts)
    }
}

fn solve_built(built: &Built, model: &MdpModel, opts: &SolveOptions) -> Result<InstanceSolution> {
    let sol = value_iteration(model, built.op(), opts)?;
    let (value_std_error, policy_std_error) = match built {
        Built::Plain(_) => (0.0, 0.0),
        Built::MonteCarlo(mc) => {
            let mut worst: f64 = 0.0;
            for s in 0..model.num_states() {
                let w = q_vector(model, &sol.value.values, s)?;
                worst = worst.max(mc.std_error(s, &w)?);
            }
            (worst / (1.0 - model.discount()), 1.0 / (mc.samples() as f64).sqrt())
        }
    };
    Ok(InstanceSolution {
        value: sol.value.values,
        policy: sol.policy,
        iterations: sol.iterations,
        residual: sol.residual,
        value_std_error,
        policy_std_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialGap {
    pub trial: usize,
    pub kind: String,
    pub value_gap: f64,
    pub policy_gap: f64,
    pub value_tol: f64,
    pub policy_tol: f64,
}

/// Reward setting that separates the two instances, with both solutions.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub trial: usize,
    pub rewards: Vec<Vec<f64>>,
    pub x_value: Vec<f64>,
    pub y_value: Vec<f64>,
    pub x_policy: Vec<Vec<f64>>,
    pub y_policy: Vec<Vec<f64>>,
    pub value_gap: f64,
    pub policy_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub x: String,
    pub y: String,
    pub offset: Vec<Vec<f64>>,
    pub trials: Vec<TrialGap>,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub summary: String,
}

#[derive(Debug, Clone, Copy)]
pub struct EquivalenceConfig {
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    /// Adds an all-zero and a large-gap reward setting after the random ones.
    pub corners: bool,
    pub solve: SolveOptions,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            tol: 1e-6,
            corners: true,
            solve: SolveOptions::default(),
        }
    }
}

pub const REWARD_RANGE: (f64, f64) = (-5.0, 5.0);
const CONSISTENT_SIGMAS: f64 = 4.0;
const REFUTE_SIGMAS: f64 = 10.0;

fn reward_settings(ns: usize, na: usize, cfg: &EquivalenceConfig) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for t in 0..cfg.trials {
        let mut rng = tagged_rng(cfg.seed, &[0xE0, t as u64]);
        let r = (0..ns * na)
            .map(|_| rng.random_range(REWARD_RANGE.0..REWARD_RANGE.1))
            .collect();
        out.push(("random".to_string(), r));
    }
    if cfg.corners {
        out.push(("tied".to_string(), vec![0.0; ns * na]));
        let gap = (0..ns * na).map(|i| if i % na == 0 { 10.0 } else { -10.0 }).collect();
        out.push(("large_gap".to_string(), gap));
    }
    out
}

fn to_rows(flat: &[f64], na: usize) -> Vec<Vec<f64>> {
    flat.chunks(na).map(<[f64]>::to_vec).collect()
}

/// Runs `x` under `r` and `y` under `r - offset` over random and corner
/// reward settings. `offset` is row-major `|S| x |A|`.
pub fn check_equivalence(
    x: &FrameworkInstance,
    y: &FrameworkInstance,
    offset: &[f64],
    cfg: &EquivalenceConfig,
) -> Result<EquivalenceReport> {
    if !x.model.same_tuple(&y.model) {
        return Err(Error::ShapeMismatch("instances do not share (S, A, q, gamma)".into()));
    }
    let (ns, na) = (x.model.num_states(), x.model.num_actions());
    if offset.len() != ns * na {
        return Err(Error::ShapeMismatch(format!(
            "offset has {} entries, expected {}",
            offset.len(),
            ns * na
        )));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let (bx, by) = (x.build()?, y.build()?);
    let mut trials = Vec::new();
    let mut witness: Option<Witness> = None;
    let mut inconclusive = false;
    for (i, (kind, r)) in reward_settings(ns, na, cfg).into_iter().enumerate() {
        let shifted: Vec<f64> = r.iter().zip(offset).map(|(a, b)| a - b).collect();
        let sx = solve_built(&bx, &x.model.with_rewards(r.clone())?, &cfg.solve)?;
        let sy = solve_built(&by, &y.model.with_rewards(shifted)?, &cfg.solve)?;
        let value_gap = sx
            .value
            .iter()
            .zip(&sy.value)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let policy_gap = sx.policy.sup_gap(&sy.policy);
        let v_se = sx.value_std_error + sy.value_std_error;
        let p_se = sx.policy_std_error + sy.policy_std_error;
        let gap = TrialGap {
            trial: i,
            kind,
            value_gap,
            policy_gap,
            value_tol: cfg.tol + CONSISTENT_SIGMAS * v_se,
            policy_tol: cfg.tol + CONSISTENT_SIGMAS * p_se,
        };
        let refuted = value_gap > cfg.tol + REFUTE_SIGMAS * v_se || policy_gap > cfg.tol + REFUTE_SIGMAS * p_se;
        if refuted && witness.is_none() {
            witness = Some(Witness {
                trial: i,
                rewards: to_rows(&r, na),
                x_value: sx.value.clone(),
                y_value: sy.value.clone(),
                x_policy: sx.policy.to_rows(),
                y_policy: sy.policy.to_rows(),
                value_gap,
                policy_gap,
            });
        } else if !refuted && (value_gap > gap.value_tol || policy_gap > gap.policy_tol) {
            inconclusive = true;
        }
        trials.push(gap);
    }
    let n = trials.len();
    let (verdict, summary) = match (&witness, inconclusive) {
        (Some(w), _) => (
            Verdict::Refuted,
            format!(
                "refuted at trial {} (value gap {:e}, policy gap {:e})",
                w.trial, w.value_gap, w.policy_gap
            ),
        ),
        (None, true) => (
            Verdict::Inconclusive,
            format!("inconclusive over {n} trials: gaps within Monte Carlo noise band"),
        ),
        (None, false) => (Verdict::Consistent, format!("consistent over {n} trials")),
    };
    Ok(EquivalenceReport {
        x: x.framework.label(),
        y: y.framework.label(),
        offset: to_rows(offset, na),
        trials,
        verdict,
        witness,
        summary,
    })
}

/// Re-solves a stored witness and returns `(value_gap, policy_gap)`.
pub fn replay_witness(
    x: &FrameworkInstance,
    y: &FrameworkInstance,
    offset: &[f64],
    witness: &Witness,
    opts: &SolveOptions,
) -> Result<(f64, f64)> {
    let r: Vec<f64> = witness.rewards.concat();
    let shifted: Vec<f64> = r.iter().zip(offset).map(|(a, b)| a - b).collect();
    let sx = solve_built(&x.build()?, &x.model.with_rewards(r)?, opts)?;
    let sy = solve_built(&y.build()?, &y.model.with_rewards(shifted)?, opts)?;
    let value_gap = sx
        .value
        .iter()
        .zip(&sy.value)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((value_gap, sx.policy.sup_gap(&sy.policy)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOutcome {
    Consistent,
    Refuted,
    Inconclusive,
    WitnessHolds,
    WitnessFails,
}

impl From<Verdict> for EdgeOutcome {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Consistent => Self::Consistent,
            Verdict::Refuted => Self::Refuted,
            Verdict::Inconclusive => Self::Inconclusive,
        }
    }
}

/// One checked relation of the nested-relation diagram.
#[derive(Debug, Clone, Serialize)]
pub struct Edge {
    pub name: String,
    pub relation: String,
    pub expected: Vec<EdgeOutcome>,
    pub observed: EdgeOutcome,
    pub as_expected: bool,
    pub trials: usize,
    pub detail: String,
}

/// One point of the uniform-noise ratio curve.
#[derive(Debug, Clone, Serialize)]
pub struct RatioPoint {
    pub gap: f64,
    pub printed: f64,
    pub exact: f64,
    pub monte_carlo: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NestedRelationReport {
    pub seed: u64,
    pub trials: usize,
    pub mc_samples: usize,
    pub edges: Vec<Edge>,
    pub ratio_curve: Vec<RatioPoint>,
    pub interior_sweep: Vec<(f64, f64)>,
}

impl NestedRelationReport {
    pub fn all_as_expected(&self) -> bool {
        self.edges.iter().all(|e| e.as_expected)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: usize,
    pub mc_samples: usize,
    pub tol: f64,
    pub solve: SolveOptions,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 50,
            mc_samples: 100_000,
            tol: 1e-6,
            solve: SolveOptions::default(),
        }
    }
}

fn edge(
    name: &str,
    relation: &str,
    expected: &[EdgeOutcome],
    observed: EdgeOutcome,
    trials: usize,
    detail: String,
) -> Edge {
    Edge {
        name: name.into(),
        relation: relation.into(),
        expected: expected.to_vec(),
        observed,
        as_expected: expected.contains(&observed),
        trials,
        detail,
    }
}

fn compare_edge(
    name: &str,
    relation: &str,
    expected: &[EdgeOutcome],
    x: FrameworkInstance,
    y: FrameworkInstance,
    offset: Vec<f64>,
    cfg: &EquivalenceConfig,
) -> Result<Edge> {
    let r = check_equivalence(&x, &y, &offset, cfg)?;
    let worst_v = r.trials.iter().map(|t| t.value_gap).fold(0.0, f64::max);
    let worst_p = r.trials.iter().map(|t| t.policy_gap).fold(0.0, f64::max);
    let detail = format!("{}; max value gap {worst_v:e}, max policy gap {worst_p:e}", r.summary);
    Ok(edge(name, relation, expected, r.verdict.into(), r.trials.len(), detail))
}

fn broadcast<T: Clone>(item: T, n: usize) -> Vec<T> {
    vec![item; n]
}

const UNIFORM_GAPS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
/// Refutation threshold on the best log-odds fit residual.
pub const FIT_RESIDUAL_THRESHOLD: f64 = 0.1;

/// The nested-relation suite: ER/EV equivalence, the uniform-noise
/// strictness witness, ER vs standard, R/DS identity for the three
/// ambiguity families, the MMM-vs-Gaussian separation, the constrained
/// witnesses and ER temperature honesty.
pub fn counterexample_suite(cfg: &SuiteConfig) -> Result<NestedRelationReport> {
    use EdgeOutcome::*;
    let eq = EquivalenceConfig {
        trials: cfg.trials,
        seed: cfg.seed,
        tol: cfg.tol,
        corners: true,
        solve: cfg.solve,
    };
    // small models keep the numeric-conjugate and Monte Carlo edges quick
    let base = random_mdp(3, 2, 0.5, REWARD_RANGE, cfg.seed)?;
    let (ns, na) = (base.num_states(), base.num_actions());
    let zero = vec![0.0; ns * na];
    let inst = |f: Framework| FrameworkInstance::new(base.clone(), f);
    let entropy = |eta: f64| -> Result<Framework> {
        Ok(Framework::Regularized(broadcast(
            Arc::new(EntropyRegularizer::new(eta)?) as Arc<dyn Regularizer>,
            ns,
        )))
    };
    let mut edges = Vec::new();

    edges.push(compare_edge(
        "er_eq_ev_closed_form",
        "ER == EV",
        &[Consistent],
        inst(entropy(1.0)?)?,
        inst(Framework::ExtremeValue { eta: 1.0 })?,
        zero.clone(),
        &eq,
    )?);

    let mc_trials = cfg.trials.min(5);
    let mc_eq = EquivalenceConfig {
        trials: mc_trials,
        corners: cfg.trials > 1,
        ..eq
    };
    edges.push(compare_edge(
        "er_eq_ev_monte_carlo",
        "ER == EV (location-0 Gumbel, offset eta*gamma_E)",
        &[Consistent, Inconclusive],
        inst(entropy(1.0)?)?,
        inst(Framework::Stochastic {
            noise: NoiseModel::gumbel(1.0)?,
            samples: cfg.mc_samples,
            seed: cfg.seed,
        })?,
        vec![EULER_GAMMA; ns * na],
        &mc_eq,
    )?);

    edges.push(compare_edge(
        "er_vs_standard",
        "ER != standard",
        &[Refuted],
        inst(entropy(1.0)?)?,
        inst(Framework::Standard)?,
        zero.clone(),
        &eq,
    )?);

    // uniform-noise strictness
    let printed_pair = [
        uniform_counterexample_ratio(0.0, 0.25, 0.0),
        uniform_counterexample_ratio(0.0, 0.75, 0.0),
    ];
    let printed_fit = fit_ev_ratios(&[0.25, 0.75], &printed_pair, false);
    let mut ratio_curve = Vec::new();
    for (i, d) in UNIFORM_GAPS.iter().enumerate() {
        let p = mc_policy(
            &[0.0, *d],
            &three_state_noise(),
            0,
            cfg.mc_samples.max(100),
            cfg.seed.wrapping_add(i as u64),
        )?;
        ratio_curve.push(RatioPoint {
            gap: *d,
            printed: uniform_counterexample_ratio(0.0, *d, 0.0),
            exact: uniform_counterexample_ratio_exact(0.0, *d, 0.0),
            monte_carlo: p[0] / p[1],
        });
    }
    let mc_ratios: Vec<f64> = ratio_curve.iter().map(|p| p.monte_carlo).collect();
    let mc_fit = fit_ev_ratios(&UNIFORM_GAPS, &mc_ratios, true);
    let refuted = printed_fit.residual > FIT_RESIDUAL_THRESHOLD && mc_fit.residual > FIT_RESIDUAL_THRESHOLD;
    edges.push(edge(
        "s_strictly_contains_ev",
        "S-MDP with uniform noise is not an EV-MDP",
        &[Refuted],
        if refuted { Refuted } else { Consistent },
        UNIFORM_GAPS.len(),
        format!(
            "ratio pair ({:.6}, {:.6}) best single-eta residual {:.6}; simulated odds best fit with free offset residual {:.6}",
            printed_pair[0], printed_pair[1], printed_fit.residual, mc_fit.residual
        ),
    ));

    // regularized == distributional, same code path
    let families: Vec<(&str, AmbiguitySet, Arc<dyn Regularizer>)> = {
        let mdm = MarginalDistributionModel::new(vec![MarginalFamily::Exponential { rate: 1.0 }; na])?;
        let mmm = MarginalMomentModel::new(vec![1.0, 0.5])?;
        let cov = CovarianceModel::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]])?;
        vec![
            ("mdm_exponential", AmbiguitySet::Mdm(mdm.clone()), Arc::new(mdm)),
            ("mmm", AmbiguitySet::Mmm(mmm.clone()), Arc::new(mmm)),
            ("covariance", AmbiguitySet::Covariance(cov.clone()), Arc::new(cov)),
        ]
    };
    for (name, set, phi) in &families {
        edges.push(compare_edge(
            &format!("r_eq_ds_{name}"),
            "R == DS",
            &[Consistent],
            inst(Framework::Regularized(broadcast(phi.clone(), ns)))?,
            inst(Framework::Distributional(broadcast(set.clone(), ns)))?,
            zero.clone(),
            &eq,
        )?);
    }

    edges.push(compare_edge(
        "mdm_exponential_eq_er",
        "DS(exponential marginals) == ER with offset -1",
        &[Consistent],
        inst(Framework::Distributional(broadcast(families[0].1.clone(), ns)))?,
        inst(entropy(1.0)?)?,
        vec![-1.0; ns * na],
        &eq,
    )?);

    let sigma = [1.0, 0.5];
    let gauss = NoiseModel::gaussian(broadcast(
        nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(na, sigma.iter().map(|s| s * s))),
        ns,
    ))?;
    edges.push(compare_edge(
        "mmm_ds_vs_gaussian_s",
        "DS(marginal moments) != S(Gaussian member)",
        &[Refuted],
        inst(Framework::Distributional(broadcast(
            AmbiguitySet::Mmm(MarginalMomentModel::new(sigma.to_vec())?),
            ns,
        )))?,
        inst(Framework::Stochastic {
            noise: gauss,
            samples: cfg.mc_samples,
            seed: cfg.seed,
        })?,
        zero.clone(),
        &mc_eq,
    )?);

    let sweep = er_interior_sweep(1.0, 50, 0.9)?;
    edges.push(edge(
        "ct_interior_sweep",
        "ER policies sweep the interior (no finite constrained family reproduces them)",
        &[WitnessHolds],
        if sweep.holds() { WitnessHolds } else { WitnessFails },
        sweep.probabilities.len(),
        format!(
            "{} settings, distinct={}, interior={}",
            sweep.probabilities.len(),
            sweep.distinct,
            sweep.interior
        ),
    ));

    let candidates: Vec<Arc<dyn Regularizer>> = vec![
        Arc::new(EntropyRegularizer::new(1.0)?),
        Arc::new(EntropyRegularizer::new(0.1)?),
        Arc::new(ZeroRegularizer),
        Arc::new(MarginalMomentModel::new(vec![1.0, 1.0])?),
    ];
    let single = singleton_witness(&candidates, 0.9)?;
    edges.push(edge(
        "ct_singleton",
        "singleton-constrained policy is not produced by any bounded regularizer",
        &[WitnessHolds],
        if single.holds() { WitnessHolds } else { WitnessFails },
        single.reward_gaps.len() + 1,
        format!(
            "constrained policy constant over {} settings; {} bounded candidates refuted",
            single.ct_probabilities.len(),
            single.candidates.iter().filter(|c| c.refuted).count()
        ),
    ));

    edges.push(compare_edge(
        "er_temperatures",
        "ER(eta=1) != ER(eta=2)",
        &[Refuted],
        inst(entropy(1.0)?)?,
        inst(entropy(2.0)?)?,
        zero,
        &eq,
    )?);

    Ok(NestedRelationReport {
        seed: cfg.seed,
        trials: cfg.trials,
        mc_samples: cfg.mc_samples,
        edges,
        ratio_curve,
        interior_sweep: sweep.rewards.into_iter().zip(sweep.probabilities).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MdpModel {
        random_mdp(3, 2, 0.8, (-1.0, 1.0), 4).unwrap()
    }

    fn quick() -> EquivalenceConfig {
        EquivalenceConfig {
            trials: 10,
            ..Default::default()
        }
    }

    #[test]
    fn reflexive_standard() {
        let x = FrameworkInstance::new(small(), Framework::Standard).unwrap();
        let r = check_equivalence(&x, &x, &[0.0; 6], &quick()).unwrap();
        assert_eq!(r.verdict, Verdict::Consistent);
        assert!(r.trials.iter().all(|t| t.value_gap == 0.0 && t.policy_gap == 0.0));
        assert_eq!(r.trials.len(), 12);
    }

    #[test]
    fn er_vs_standard_carries_replayable_witness() {
        let phi: Arc<dyn Regularizer> = Arc::new(EntropyRegularizer::new(1.0).unwrap());
        let x = FrameworkInstance::new(small(), Framework::Regularized(vec![phi; 3])).unwrap();
        let y = FrameworkInstance::new(small(), Framework::Standard).unwrap();
        let r = check_equivalence(&x, &y, &[0.0; 6], &quick()).unwrap();
        assert_eq!(r.verdict, Verdict::Refuted);
        let w = r.witness.unwrap();
        let (v, p) = replay_witness(&x, &y, &[0.0; 6], &w, &SolveOptions::default()).unwrap();
        assert!((v - w.value_gap).abs() <= 1e-12 && (p - w.policy_gap).abs() <= 1e-12);
    }

    #[test]
    fn swapping_sides_keeps_verdict() {
        let phi: Arc<dyn Regularizer> = Arc::new(EntropyRegularizer::new(1.0).unwrap());
        let mdm = MarginalDistributionModel::new(vec![MarginalFamily::Exponential { rate: 1.0 }; 2]).unwrap();
        let x = FrameworkInstance::new(small(), Framework::Distributional(vec![AmbiguitySet::Mdm(mdm); 3])).unwrap();
        let y = FrameworkInstance::new(small(), Framework::Regularized(vec![phi; 3])).unwrap();
        let a = check_equivalence(&x, &y, &[-1.0; 6], &quick()).unwrap();
        let b = check_equivalence(&y, &x, &[1.0; 6], &quick()).unwrap();
        assert_eq!(a.verdict, Verdict::Consistent);
        assert_eq!(a.verdict, b.verdict);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = FrameworkInstance::new(small(), Framework::Standard).unwrap();
        let y = FrameworkInstance::new(random_mdp(2, 2, 0.8, (-1.0, 1.0), 4).unwrap(), Framework::Standard).unwrap();
        assert!(matches!(
            check_equivalence(&x, &y, &[0.0; 6], &quick()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
