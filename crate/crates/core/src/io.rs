//! JSON model files.
//!
//! ```json
//! {
//!   "num_states": 1, "num_actions": 1, "discount": 0.5,
//!   "reward": [[1.0]],
//!   "transition": [[[1.0]]],
//!   "framework": {"kind": "regularized", "regularizer": {"kind": "entropy", "eta": 1.0}}
//! }
//! ```
//!
//! The `regularizer`, `ambiguity` and `constraint` blocks accept either one
//! object, applied to every state, or a list with one object per state.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constrained::{ConstraintSet, LagrangePenalty, PenaltyKind};
use crate::distributional::{
    AmbiguitySet, CovarianceModel, MarginalDistributionModel, MarginalFamily, MarginalMomentModel, TabulatedInverseCdf,
};
use crate::equivalence::{Framework, FrameworkInstance};
use crate::error::{Error, Result};
use crate::model::MdpModel;
use crate::regularized::{EntropyRegularizer, KlRegularizer, Regularizer, ZeroRegularizer};
use crate::stochastic::NoiseModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework: Option<FrameworkSpec>,
}

/// One object for all states, or one per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerState<T> {
    PerState(Vec<T>),
    Broadcast(T),
}

impl<T: Clone> PerState<T> {
    pub fn expand(&self, num_states: usize) -> Result<Vec<T>> {
        match self {
            Self::Broadcast(t) => Ok(vec![t.clone(); num_states]),
            Self::PerState(v) if v.len() == num_states => Ok(v.clone()),
            Self::PerState(v) => Err(Error::ShapeMismatch(format!(
                "{} per-state blocks for {num_states} states",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrameworkSpec {
    Standard,
    Regularized {
        regularizer: PerState<RegularizerSpec>,
    },
    ExtremeValue {
        eta: f64,
    },
    Stochastic {
        noise: NoiseSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Distributional {
        ambiguity: PerState<AmbiguitySpec>,
    },
    Constrained {
        constraint: PerState<ConstraintSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Exponential,
    Uniform,
    Gumbel,
    Tabulated,
}

/// One marginal law. Only the fields of the named family are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalSpec {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// `[t, F^{-1}(t)]` knots from `t = 0` to `t = 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<[f64; 2]>>,
}

fn field(v: Option<f64>, name: &str, family: FamilyName) -> Result<f64> {
    v.ok_or_else(|| Error::Format(format!("{family:?} marginal needs \"{name}\"")))
}

impl MarginalSpec {
    pub fn build(&self) -> Result<MarginalFamily> {
        let f = self.family;
        Ok(match f {
            FamilyName::Exponential => MarginalFamily::Exponential {
                rate: field(self.rate, "rate", f)?,
            },
            FamilyName::Uniform => MarginalFamily::Uniform {
                lo: field(self.lo, "lo", f)?,
                hi: field(self.hi, "hi", f)?,
            },
            FamilyName::Gumbel => MarginalFamily::Gumbel {
                scale: field(self.scale, "scale", f)?,
            },
            FamilyName::Tabulated => {
                let knots = self
                    .knots
                    .as_ref()
                    .ok_or_else(|| Error::Format("tabulated marginal needs \"knots\"".into()))?;
                MarginalFamily::Tabulated {
                    table: TabulatedInverseCdf::new(knots.iter().map(|k| (k[0], k[1])).collect())?,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerSpec {
    Zero,
    Entropy {
        eta: f64,
    },
    Kl {
        eta: f64,
        reference: Vec<f64>,
    },
    Mmm {
        sigma: Vec<f64>,
    },
    Covariance {
        matrix: Vec<Vec<f64>>,
    },
    Mdm {
        marginals: Vec<MarginalSpec>,
    },
    /// `-multiplier (l(pi) - radius)` with `l` a KL or chi-square divergence.
    Lagrange {
        divergence: PenaltyKind,
        reference: Vec<f64>,
        radius: f64,
        multiplier: f64,
    },
}

impl RegularizerSpec {
    pub fn build(&self) -> Result<Arc<dyn Regularizer>> {
        Ok(match self {
            Self::Zero => Arc::new(ZeroRegularizer),
            Self::Entropy { eta } => Arc::new(EntropyRegularizer::new(*eta)?),
            Self::Kl { eta, reference } => Arc::new(KlRegularizer::new(*eta, reference)?),
            Self::Mmm { sigma } => Arc::new(MarginalMomentModel::new(sigma.clone())?),
            Self::Covariance { matrix } => Arc::new(CovarianceModel::from_rows(matrix)?),
            Self::Mdm { marginals } => Arc::new(MarginalDistributionModel::new(
                marginals.iter().map(MarginalSpec::build).collect::<Result<_>>()?,
            )?),
            Self::Lagrange {
                divergence,
                reference,
                radius,
                multiplier,
            } => {
                if !(*multiplier >= 0.0) {
                    return Err(Error::InvalidArgument("multiplier must be >= 0".into()));
                }
                Arc::new(LagrangePenalty {
                    kind: *divergence,
                    reference: reference.clone(),
                    radius: *radius,
                    multiplier: *multiplier,
                })
            }
        })
    }
}

/// Uniform noise bounds: flat row-major over `(s, a)` or nested `[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UniformBounds {
    Flat(Vec<[f64; 2]>),
    Nested(Vec<Vec<[f64; 2]>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    GumbelIid {
        eta: f64,
    },
    Uniform {
        bounds: UniformBounds,
    },
    /// One covariance per state.
    Gaussian {
        cov: Vec<Vec<Vec<f64>>>,
    },
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch("matrix must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl NoiseSpec {
    pub fn build(&self, num_states: usize, num_actions: usize) -> Result<NoiseModel> {
        let noise = match self {
            Self::GumbelIid { eta } => NoiseModel::gumbel(*eta)?,
            Self::Uniform { bounds } => {
                let nested: Vec<Vec<(f64, f64)>> = match bounds {
                    UniformBounds::Flat(flat) => {
                        if flat.len() != num_states * num_actions {
                            return Err(Error::ShapeMismatch(format!(
                                "{} uniform bounds for {} state-action pairs",
                                flat.len(),
                                num_states * num_actions
                            )));
                        }
                        flat.chunks(num_actions.max(1))
                            .map(|c| c.iter().map(|b| (b[0], b[1])).collect())
                            .collect()
                    }
                    UniformBounds::Nested(rows) => {
                        rows.iter().map(|r| r.iter().map(|b| (b[0], b[1])).collect()).collect()
                    }
                };
                NoiseModel::uniform(nested)?
            }
            Self::Gaussian { cov } => NoiseModel::gaussian(cov.iter().map(|m| matrix(m)).collect::<Result<_>>()?)?,
        };
        noise.check_shape(num_states, num_actions)?;
        Ok(noise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmbiguitySpec {
    /// Either a single `family` (with its parameters) for every action, or
    /// `marginals` listing one law per action.
    Mdm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        family: Option<FamilyName>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        knots: Option<Vec<[f64; 2]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        marginals: Option<Vec<MarginalSpec>>,
    },
    Mmm {
        sigma: Vec<f64>,
    },
    /// `matrix` for one state, or `matrices` listing every state's.
    Covariance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrices: Option<Vec<Vec<Vec<f64>>>>,
    },
}

fn ambiguity_sets(spec: &PerState<AmbiguitySpec>, num_states: usize, num_actions: usize) -> Result<Vec<AmbiguitySet>> {
    // a single covariance block with `matrices` carries every state at once
    if let PerState::Broadcast(AmbiguitySpec::Covariance {
        matrix: None,
        matrices: Some(ms),
    }) = spec
    {
        if ms.len() != num_states {
            return Err(Error::ShapeMismatch(format!(
                "{} covariance matrices for {num_states} states",
                ms.len()
            )));
        }
        return ms
            .iter()
            .map(|m| Ok(AmbiguitySet::Covariance(CovarianceModel::from_rows(m)?)))
            .collect();
    }
    spec.expand(num_states)?
        .iter()
        .map(|a| {
            let set = match a {
                AmbiguitySpec::Mdm {
                    family,
                    rate,
                    lo,
                    hi,
                    scale,
                    knots,
                    marginals,
                } => {
                    let laws = match (marginals, family) {
                        (Some(ms), None) => ms.iter().map(MarginalSpec::build).collect::<Result<Vec<_>>>()?,
                        (None, Some(f)) => {
                            let one = MarginalSpec {
                                family: *f,
                                rate: *rate,
                                lo: *lo,
                                hi: *hi,
                                scale: *scale,
                                knots: knots.clone(),
                            }
                            .build()?;
                            vec![one; num_actions]
                        }
                        _ => {
                            return Err(Error::Format(
                                "mdm block needs exactly one of \"family\" or \"marginals\"".into(),
                            ))
                        }
                    };
                    AmbiguitySet::Mdm(MarginalDistributionModel::new(laws)?)
                }
                AmbiguitySpec::Mmm { sigma } => AmbiguitySet::Mmm(MarginalMomentModel::new(sigma.clone())?),
                AmbiguitySpec::Covariance {
                    matrix: Some(m),
                    matrices: None,
                } => AmbiguitySet::Covariance(CovarianceModel::from_rows(m)?),
                AmbiguitySpec::Covariance { .. } => {
                    return Err(Error::Format(
                        "per-state covariance blocks need exactly \"matrix\"".into(),
                    ))
                }
            };
            if set.num_actions() != num_actions {
                return Err(Error::ShapeMismatch(format!(
                    "{} ambiguity set has {} actions, model has {num_actions}",
                    set.family(),
                    set.num_actions()
                )));
            }
            Ok(set)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    KlBall {
        reference: Vec<f64>,
        radius: f64,
    },
    L1Ball {
        reference: Vec<f64>,
        radius: f64,
    },
    L2Ball {
        reference: Vec<f64>,
        radius: f64,
    },
    Singleton {
        row: Vec<f64>,
    },
    Full,
    /// `-phi(pi) <= level`.
    Sublevel {
        regularizer: RegularizerSpec,
        level: f64,
    },
}

impl ConstraintSpec {
    pub fn build(&self) -> Result<ConstraintSet> {
        Ok(match self {
            Self::KlBall { reference, radius } => ConstraintSet::KlBall {
                reference: reference.clone(),
                radius: *radius,
            },
            Self::L1Ball { reference, radius } => ConstraintSet::L1Ball {
                reference: reference.clone(),
                radius: *radius,
            },
            Self::L2Ball { reference, radius } => ConstraintSet::L2Ball {
                reference: reference.clone(),
                radius: *radius,
            },
            Self::Singleton { row } => ConstraintSet::Singleton { row: row.clone() },
            Self::Full => ConstraintSet::Full,
            Self::Sublevel { regularizer, level } => ConstraintSet::Sublevel {
                phi: regularizer.build()?,
                level: *level,
            },
        })
    }
}

/// Monte Carlo settings used when a stochastic block omits them.
#[derive(Debug, Clone, Copy)]
pub struct McDefaults {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McDefaults {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
        }
    }
}

impl FrameworkSpec {
    pub fn build(&self, num_states: usize, num_actions: usize, mc: McDefaults) -> Result<Framework> {
        Ok(match self {
            Self::Standard => Framework::Standard,
            Self::Regularized { regularizer } => Framework::Regularized(
                regularizer
                    .expand(num_states)?
                    .iter()
                    .map(RegularizerSpec::build)
                    .collect::<Result<_>>()?,
            ),
            Self::ExtremeValue { eta } => Framework::ExtremeValue { eta: *eta },
            Self::Stochastic { noise, samples, seed } => Framework::Stochastic {
                noise: noise.build(num_states, num_actions)?,
                samples: samples.unwrap_or(mc.samples),
                seed: seed.unwrap_or(mc.seed),
            },
            Self::Distributional { ambiguity } => {
                Framework::Distributional(ambiguity_sets(ambiguity, num_states, num_actions)?)
            }
            Self::Constrained { constraint } => Framework::Constrained(
                constraint
                    .expand(num_states)?
                    .iter()
                    .map(ConstraintSpec::build)
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

impl ModelFile {
    pub fn from_model(model: &MdpModel, framework: Option<FrameworkSpec>) -> Self {
        let (ns, na) = (model.num_states(), model.num_actions());
        Self {
            num_states: ns,
            num_actions: na,
            discount: model.discount(),
            reward: (0..ns).map(|s| model.reward_row(s).to_vec()).collect(),
            transition: (0..ns)
                .map(|s| (0..na).map(|a| model.transition_row(s, a).to_vec()).collect())
                .collect(),
            framework,
        }
    }

    /// Builds and validates the model.
    pub fn to_model(&self) -> Result<MdpModel> {
        let (ns, na) = (self.num_states, self.num_actions);
        if self.reward.len() != ns || self.reward.iter().any(|r| r.len() != na) {
            return Err(Error::ShapeMismatch(format!("reward must be {ns} x {na}")));
        }
        if self.transition.len() != ns
            || self
                .transition
                .iter()
                .any(|r| r.len() != na || r.iter().any(|q| q.len() != ns))
        {
            return Err(Error::ShapeMismatch(format!("transition must be {ns} x {na} x {ns}")));
        }
        MdpModel::new(
            ns,
            na,
            self.transition.concat().concat(),
            self.reward.concat(),
            self.discount,
        )
    }

    pub fn instance(&self, mc: McDefaults) -> Result<FrameworkInstance> {
        let model = self.to_model()?;
        let framework = match &self.framework {
            Some(f) => f.build(model.num_states(), model.num_actions(), mc)?,
            None => Framework::Standard,
        };
        FrameworkInstance::new(model, framework)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model files always serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_standard() {
        let m = crate::model::random_mdp(3, 2, 0.7, (-1.0, 1.0), 1).unwrap();
        let f = ModelFile::from_model(&m, None);
        let back = ModelFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn blocks_parse() {
        let text = r#"{
            "num_states": 2, "num_actions": 2, "discount": 0.5,
            "reward": [[1, 0], [0, 1]],
            "transition": [[[1, 0], [0, 1]], [[0.5, 0.5], [1, 0]]],
            "framework": {"kind": "distributional", "ambiguity": {"kind": "mdm", "family": "exponential", "rate": 1.0}}
        }"#;
        let inst = ModelFile::from_json(text)
            .unwrap()
            .instance(McDefaults::default())
            .unwrap();
        assert!(matches!(inst.framework, Framework::Distributional(ref s) if s.len() == 2));

        let per_state: FrameworkSpec = serde_json::from_str(
            r#"{"kind": "constrained", "constraint": [{"kind": "kl_ball", "reference": [0.5, 0.5], "radius": 0.1}, {"kind": "full"}]}"#,
        )
        .unwrap();
        let fw = per_state.build(2, 2, McDefaults::default()).unwrap();
        assert!(matches!(fw, Framework::Constrained(ref s) if s.len() == 2));

        let noise: FrameworkSpec = serde_json::from_str(
            r#"{"kind": "stochastic", "noise": {"kind": "uniform", "bounds": [[0,1],[0,0],[0,0],[0,0]]}}"#,
        )
        .unwrap();
        assert!(noise.build(2, 2, McDefaults::default()).is_ok());

        let cov: FrameworkSpec = serde_json::from_str(
            r#"{"kind": "distributional", "ambiguity": {"kind": "covariance", "matrices": [[[1,0],[0,1]], [[2,0],[0,1]]]}}"#,
        )
        .unwrap();
        assert!(cov.build(2, 2, McDefaults::default()).is_ok());
    }

    #[test]
    fn invalid_rows_are_reported() {
        let text = r#"{"num_states": 1, "num_actions": 1, "discount": 0.5, "reward": [[1]], "transition": [[[0.9]]]}"#;
        let err = ModelFile::from_json(text).unwrap().to_model().unwrap_err();
        assert!(matches!(err, Error::InvalidModel(ref v) if !v.is_empty()));
        let text = r#"{"num_states": 1, "num_actions": 1, "discount": 0.5, "reward": [[1, 2]], "transition": [[[1]]]}"#;
        assert!(matches!(
            ModelFile::from_json(text).unwrap().to_model(),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
