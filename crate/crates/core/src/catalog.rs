//! Randomly parameterised instances of every backup operator, for property
//! suites and benchmarks.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::constrained::{ConstraintSet, CtBackup};
use crate::distributional::{
    AmbiguitySet, CovarianceModel, DsBackup, MarginalDistributionModel, MarginalFamily, MarginalMomentModel,
};
use crate::error::Result;
use crate::regularized::{EntropyRegularizer, KlRegularizer, RegularizedBackup, Regularizer};
use crate::rng::{tagged_rng, StreamRng};
use crate::solver::{BackupOperator, StandardBackup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Standard,
    Entropy,
    Kl,
    DsMmm,
    DsMdm,
    DsCovariance,
    CtKl,
    CtL1,
    CtL2,
    CtSingleton,
    CtFull,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 11] = [
        Self::Standard,
        Self::Entropy,
        Self::Kl,
        Self::DsMmm,
        Self::DsMdm,
        Self::DsCovariance,
        Self::CtKl,
        Self::CtL1,
        Self::CtL2,
        Self::CtSingleton,
        Self::CtFull,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Entropy => "entropy",
            Self::Kl => "kl",
            Self::DsMmm => "ds_mmm",
            Self::DsMdm => "ds_mdm",
            Self::DsCovariance => "ds_covariance",
            Self::CtKl => "ct_kl",
            Self::CtL1 => "ct_l1",
            Self::CtL2 => "ct_l2",
            Self::CtSingleton => "ct_singleton",
            Self::CtFull => "ct_full",
        }
    }
}

/// Strictly positive probability row.
pub fn random_row(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn random_covariance(rng: &mut StreamRng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.2
}

/// An operator of `kind` on `num_states x num_actions` with per-state
/// parameters drawn from `seed`.
pub fn random_operator(
    kind: OperatorKind,
    num_states: usize,
    num_actions: usize,
    seed: u64,
) -> Result<Box<dyn BackupOperator>> {
    let mut rng = tagged_rng(seed, &[0xCA7]);
    let rng = &mut rng;
    let n = num_actions;
    let per_state = |f: &mut dyn FnMut() -> Result<Arc<dyn Regularizer>>| -> Result<Vec<Arc<dyn Regularizer>>> {
        (0..num_states).map(|_| f()).collect()
    };
    Ok(match kind {
        OperatorKind::Standard => Box::new(StandardBackup),
        OperatorKind::Entropy => Box::new(RegularizedBackup::new(per_state(&mut || {
            Ok(Arc::new(EntropyRegularizer::new(0.1 + 2.0 * rng.random::<f64>())?))
        })?)),
        OperatorKind::Kl => Box::new(RegularizedBackup::new(per_state(&mut || {
            let eta = 0.1 + 2.0 * rng.random::<f64>();
            let reference = random_row(rng, n);
            Ok(Arc::new(KlRegularizer::new(eta, &reference)?))
        })?)),
        OperatorKind::DsMmm => {
            let sets = (0..num_states)
                .map(|_| {
                    let sigma = (0..n).map(|_| 0.1 + 2.0 * rng.random::<f64>()).collect();
                    Ok(AmbiguitySet::Mmm(MarginalMomentModel::new(sigma)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Box::new(DsBackup::new(sets))
        }
        OperatorKind::DsMdm => {
            let sets = (0..num_states)
                .map(|_| {
                    let marginals = (0..n)
                        .map(|a| match a % 3 {
                            0 => MarginalFamily::Uniform {
                                lo: -rng.random::<f64>(),
                                hi: 1.0 + rng.random::<f64>(),
                            },
                            1 => MarginalFamily::Exponential {
                                rate: 0.5 + rng.random::<f64>(),
                            },
                            _ => MarginalFamily::Gumbel {
                                scale: 0.2 + rng.random::<f64>(),
                            },
                        })
                        .collect();
                    Ok(AmbiguitySet::Mdm(MarginalDistributionModel::new(marginals)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Box::new(DsBackup::new(sets))
        }
        OperatorKind::DsCovariance => {
            let sets = (0..num_states)
                .map(|_| {
                    Ok(AmbiguitySet::Covariance(CovarianceModel::new(random_covariance(
                        rng, n,
                    ))?))
                })
                .collect::<Result<Vec<_>>>()?;
            Box::new(DsBackup::new(sets))
        }
        OperatorKind::CtKl
        | OperatorKind::CtL1
        | OperatorKind::CtL2
        | OperatorKind::CtSingleton
        | OperatorKind::CtFull => {
            let sets = (0..num_states)
                .map(|_| {
                    let reference = random_row(rng, n);
                    let u: f64 = rng.random();
                    match kind {
                        OperatorKind::CtKl => ConstraintSet::KlBall {
                            reference,
                            radius: 0.01 + u,
                        },
                        OperatorKind::CtL1 => ConstraintSet::L1Ball {
                            reference,
                            radius: 0.01 + 1.5 * u,
                        },
                        OperatorKind::CtL2 => ConstraintSet::L2Ball {
                            reference,
                            radius: 0.01 + u,
                        },
                        OperatorKind::CtSingleton => ConstraintSet::Singleton { row: reference },
                        _ => ConstraintSet::Full,
                    }
                })
                .collect();
            Box::new(CtBackup::new(sets))
        }
    })
}
