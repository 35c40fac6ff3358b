use std::path::Path;
use std::time::Instant;

use nestmdp::constrained::{
    ct_backup, ct_to_r_convert, l1_printed_dual, l2_printed_dual, r_to_ct_convert, ConstraintSet, CtOptions,
};
use nestmdp::equivalence::{
    check_equivalence, counterexample_suite, EquivalenceConfig, EquivalenceReport, Framework, NestedRelationReport,
    SuiteConfig,
};
use nestmdp::io::{ConstraintSpec, FrameworkSpec, McDefaults, ModelFile, PerState, RegularizerSpec};
use nestmdp::{q_vector, random_mdp, ConjugateOptions, Error, Policy, SolveOptions};
use serde::Serialize;

use crate::args::{Common, Direction};
use crate::error::CliError;
use crate::output::{num, OutDir};

fn solve_options(c: &Common) -> SolveOptions {
    SolveOptions {
        tol: c.tol,
        max_iter: c.max_iter,
    }
}

fn mc_defaults(c: &Common) -> McDefaults {
    McDefaults {
        samples: c.mc_samples,
        seed: c.seed,
    }
}

fn timed<T>(label: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let start = Instant::now();
    let out = f();
    eprintln!("{label}: {:.3} s", start.elapsed().as_secs_f64());
    out
}

fn load(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(ModelFile::from_json(&text)?)
}

fn value_rows(value: &[f64]) -> Vec<Vec<String>> {
    value
        .iter()
        .enumerate()
        .map(|(s, v)| vec![s.to_string(), num(*v)])
        .collect()
}

fn policy_rows(policy: &Policy) -> Vec<Vec<String>> {
    policy
        .rows()
        .enumerate()
        .flat_map(|(s, row)| {
            row.iter()
                .enumerate()
                .map(move |(a, p)| vec![s.to_string(), a.to_string(), num(*p)])
        })
        .collect()
}

/// Serde's (snake_case) name of a unit variant.
fn snake<T: Serialize>(x: &T) -> String {
    serde_json::to_value(x)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Exact L1/L2-ball backup beside the printed dual formula, at the fixed point.
#[derive(Debug, Serialize)]
struct Discrepancy {
    state: usize,
    set: &'static str,
    exact: f64,
    printed_dual: f64,
    gap: f64,
}

#[derive(Debug, Serialize)]
struct SolveReport<'a> {
    config: &'a Common,
    framework: String,
    num_states: usize,
    num_actions: usize,
    discount: f64,
    iterations: usize,
    residual: f64,
    value_std_error: f64,
    policy_std_error: f64,
    value: Vec<f64>,
    policy: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    discrepancies: Vec<Discrepancy>,
}

pub fn solve(common: &Common, out: &OutDir, model: &Path) -> Result<(), CliError> {
    let file = load(model)?;
    let inst = file.instance(mc_defaults(common))?;
    let sol = timed("solve", || Ok(inst.solve(&solve_options(common))?))?;
    let mut discrepancies = Vec::new();
    if let Framework::Constrained(sets) = &inst.framework {
        for (s, set) in sets.iter().enumerate() {
            let w = q_vector(&inst.model, &sol.value, s)?;
            let printed = match set {
                ConstraintSet::L1Ball { reference, radius } => l1_printed_dual(&w, reference, *radius),
                ConstraintSet::L2Ball { reference, radius } => l2_printed_dual(&w, reference, *radius),
                _ => continue,
            };
            let exact = ct_backup(&w, set, &CtOptions::default())?.value;
            discrepancies.push(Discrepancy {
                state: s,
                set: set.kind(),
                exact,
                printed_dual: printed,
                gap: printed - exact,
            });
        }
    }
    let report = SolveReport {
        config: common,
        framework: inst.framework.label(),
        num_states: inst.model.num_states(),
        num_actions: inst.model.num_actions(),
        discount: inst.model.discount(),
        iterations: sol.iterations,
        residual: sol.residual,
        value_std_error: sol.value_std_error,
        policy_std_error: sol.policy_std_error,
        value: sol.value.clone(),
        policy: sol.policy.to_rows(),
        discrepancies,
    };
    out.json("solution.json", &report)?;
    out.csv("value.csv", &["state", "value"], value_rows(&sol.value))?;
    out.csv(
        "policy.csv",
        &["state", "action", "probability"],
        policy_rows(&sol.policy),
    )?;
    Ok(())
}

/// Offset file: a single number applied everywhere, or an `[s][a]` array.
fn load_offset(path: Option<&Path>, ns: usize, na: usize) -> Result<Vec<f64>, CliError> {
    let Some(path) = path else {
        return Ok(vec![0.0; ns * na]);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if let Some(x) = value.as_f64() {
        return Ok(vec![x; ns * na]);
    }
    let rows: Vec<Vec<f64>> = serde_json::from_value(value).map_err(|e| {
        Error::Format(format!(
            "{}: offset must be a number or [s][a] array: {e}",
            path.display()
        ))
    })?;
    if rows.len() != ns || rows.iter().any(|r| r.len() != na) {
        return Err(Error::ShapeMismatch(format!("offset must be {ns} x {na}")).into());
    }
    Ok(rows.concat())
}

#[derive(Debug, Serialize)]
struct CompareReport<'a> {
    config: &'a Common,
    eq_tol: f64,
    #[serde(flatten)]
    report: EquivalenceReport,
}

pub fn compare(
    common: &Common,
    out: &OutDir,
    x: &Path,
    y: &Path,
    offset: Option<&Path>,
    eq_tol: f64,
    corners: bool,
) -> Result<(), CliError> {
    let mc = mc_defaults(common);
    let (fx, fy) = (load(x)?.instance(mc)?, load(y)?.instance(mc)?);
    let offset = load_offset(offset, fx.model.num_states(), fx.model.num_actions())?;
    let cfg = EquivalenceConfig {
        trials: common.trials,
        seed: common.seed,
        tol: eq_tol,
        corners,
        solve: solve_options(common),
    };
    let report = timed("compare", || Ok(check_equivalence(&fx, &fy, &offset, &cfg)?))?;
    eprintln!("{}", report.summary);
    let rows = report.trials.iter().map(|t| {
        vec![
            t.trial.to_string(),
            t.kind.clone(),
            num(t.value_gap),
            num(t.policy_gap),
            num(t.value_tol),
            num(t.policy_tol),
        ]
    });
    out.csv(
        "trials.csv",
        &["trial", "kind", "value_gap", "policy_gap", "value_tol", "policy_tol"],
        rows.collect::<Vec<_>>(),
    )?;
    out.json(
        "comparison.json",
        &CompareReport {
            config: common,
            eq_tol,
            report,
        },
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Figure1Report<'a> {
    config: &'a Common,
    eq_tol: f64,
    all_as_expected: bool,
    #[serde(flatten)]
    report: NestedRelationReport,
}

pub fn figure1(common: &Common, out: &OutDir, eq_tol: f64) -> Result<(), CliError> {
    let cfg = SuiteConfig {
        seed: common.seed,
        trials: common.trials,
        mc_samples: common.mc_samples,
        tol: eq_tol,
        solve: solve_options(common),
    };
    let report = timed("figure1", || Ok(counterexample_suite(&cfg)?))?;
    for e in &report.edges {
        eprintln!(
            "{:<28} {:?}{}",
            e.name,
            e.observed,
            if e.as_expected { "" } else { "  (unexpected)" }
        );
    }
    let edges = report.edges.iter().map(|e| {
        let expected: Vec<String> = e.expected.iter().map(snake).collect();
        vec![
            e.name.clone(),
            e.relation.clone(),
            snake(&e.observed),
            expected.join("|"),
            e.as_expected.to_string(),
            e.trials.to_string(),
        ]
    });
    out.csv(
        "figure1_edges.csv",
        &["edge", "relation", "observed", "expected", "as_expected", "trials"],
        edges.collect::<Vec<_>>(),
    )?;
    let ratio = report
        .ratio_curve
        .iter()
        .map(|p| vec![num(p.gap), num(p.printed), num(p.exact), num(p.monte_carlo)]);
    out.csv(
        "figure1_ratio.csv",
        &["gap", "printed", "exact", "monte_carlo"],
        ratio.collect::<Vec<_>>(),
    )?;
    let sweep = report.interior_sweep.iter().map(|(r, p)| vec![num(*r), num(*p)]);
    out.csv(
        "figure1_sweep.csv",
        &["reward", "probability"],
        sweep.collect::<Vec<_>>(),
    )?;
    out.json(
        "figure1.json",
        &Figure1Report {
            config: common,
            eq_tol,
            all_as_expected: report.all_as_expected(),
            report,
        },
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ConversionRecord<'a> {
    config: &'a Common,
    direction: Direction,
    /// `c_s` (r2ct) or the multipliers `lambda_s` (ct2r).
    per_state: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slackness: Option<Vec<f64>>,
    source_value: Vec<f64>,
    converted_value: Vec<f64>,
    value_gap: f64,
    policy_gap: f64,
}

pub fn convert(common: &Common, out: &OutDir, direction: Direction, model: &Path) -> Result<(), CliError> {
    let file = load(model)?;
    let source = file.to_model()?;
    let ns = source.num_states();
    let opts = solve_options(common);
    let (converted, per_state, slackness, source_sol) = match (direction, &file.framework) {
        (Direction::R2ct, Some(FrameworkSpec::Regularized { regularizer })) => {
            let specs = regularizer.expand(ns)?;
            let phis = specs
                .iter()
                .map(RegularizerSpec::build)
                .collect::<nestmdp::Result<Vec<_>>>()?;
            let conv = timed("convert", || {
                Ok(r_to_ct_convert(&source, phis, &opts, ConjugateOptions::default())?)
            })?;
            let constraints = conv
                .sets
                .iter()
                .zip(&specs)
                .map(|(set, spec)| match set {
                    ConstraintSet::KlBall { reference, radius } => ConstraintSpec::KlBall {
                        reference: reference.clone(),
                        radius: *radius,
                    },
                    ConstraintSet::Sublevel { level, .. } => ConstraintSpec::Sublevel {
                        regularizer: spec.clone(),
                        level: *level,
                    },
                    other => unreachable!("r_to_ct_convert does not emit {}", other.kind()),
                })
                .collect();
            let fw = FrameworkSpec::Constrained {
                constraint: PerState::PerState(constraints),
            };
            (
                ModelFile::from_model(&conv.model, Some(fw)),
                conv.constants,
                None,
                conv.source,
            )
        }
        (Direction::Ct2r, Some(FrameworkSpec::Constrained { constraint })) => {
            let sets = constraint
                .expand(ns)?
                .iter()
                .map(ConstraintSpec::build)
                .collect::<nestmdp::Result<Vec<_>>>()?;
            let conv = timed("convert", || {
                Ok(ct_to_r_convert(&source, &sets, &opts, &CtOptions::default())?)
            })?;
            let regs = conv
                .penalties
                .iter()
                .map(|p| RegularizerSpec::Lagrange {
                    divergence: p.kind,
                    reference: p.reference.clone(),
                    radius: p.radius,
                    multiplier: p.multiplier,
                })
                .collect();
            let fw = FrameworkSpec::Regularized {
                regularizer: PerState::PerState(regs),
            };
            let multipliers = conv.multipliers();
            (
                ModelFile::from_model(&source, Some(fw)),
                multipliers,
                Some(conv.slackness),
                conv.source,
            )
        }
        (d, fw) => {
            let found = fw.as_ref().map(kind_name).unwrap_or("standard");
            let want = match d {
                Direction::R2ct => "regularized",
                Direction::Ct2r => "constrained",
            };
            return Err(CliError::Precondition(
                format!("{d:?} needs a {want} model, found {found}").to_lowercase(),
            ));
        }
    };
    let check = converted.instance(mc_defaults(common))?.solve(&opts)?;
    let record = ConversionRecord {
        config: common,
        direction,
        per_state,
        slackness,
        value_gap: sup_gap(&source_sol.value.values, &check.value),
        policy_gap: source_sol.policy.sup_gap(&check.policy),
        source_value: source_sol.value.values,
        converted_value: check.value,
    };
    eprintln!("value gap {:e}, policy gap {:e}", record.value_gap, record.policy_gap);
    out.text("converted.json", &(converted.to_json() + "\n"))?;
    out.json("conversion.json", &record)?;
    Ok(())
}

fn kind_name(fw: &FrameworkSpec) -> &'static str {
    match fw {
        FrameworkSpec::Standard => "standard",
        FrameworkSpec::Regularized { .. } => "regularized",
        FrameworkSpec::ExtremeValue { .. } => "extreme_value",
        FrameworkSpec::Stochastic { .. } => "stochastic",
        FrameworkSpec::Distributional { .. } => "distributional",
        FrameworkSpec::Constrained { .. } => "constrained",
    }
}

pub fn gen(
    common: &Common,
    out: &OutDir,
    states: usize,
    actions: usize,
    discount: f64,
    range: (f64, f64),
) -> Result<(), CliError> {
    if states == 0 || actions == 0 {
        return Err(CliError::Config("--states and --actions must be positive".into()));
    }
    let model = random_mdp(states, actions, discount, range, common.seed)?;
    out.text("model.json", &(ModelFile::from_model(&model, None).to_json() + "\n"))?;
    Ok(())
}
