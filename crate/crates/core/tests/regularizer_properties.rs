//! Concavity, gradients and conjugate behaviour of every regularizer.

use std::sync::Arc;

use nalgebra::DMatrix;
use nestmdp::constrained::{LagrangePenalty, PenaltyKind};
use nestmdp::distributional::{CovarianceModel, MarginalDistributionModel, MarginalFamily, MarginalMomentModel};
use nestmdp::numeric::dot;
use nestmdp::regularized::{
    bregman_divergence, conjugate_backup, numeric_conjugate, EntropyRegularizer, KlRegularizer, Scaled,
};
use nestmdp::{ConjugateOptions, Regularizer};
use proptest::prelude::*;

fn row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02f64..1.0, n).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect()
    })
}

/// Regularizer `k` of a fixed catalogue on `n` actions.
fn regularizer(k: usize, n: usize, reference: &[f64]) -> Arc<dyn Regularizer> {
    match k {
        0 => Arc::new(EntropyRegularizer::new(0.7).unwrap()),
        1 => Arc::new(KlRegularizer::new(1.3, reference).unwrap()),
        2 => Arc::new(MarginalMomentModel::new((0..n).map(|a| 0.5 + a as f64).collect()).unwrap()),
        3 => Arc::new(
            MarginalDistributionModel::new(
                (0..n)
                    .map(|a| match a % 3 {
                        0 => MarginalFamily::Uniform { lo: -1.0, hi: 2.0 },
                        1 => MarginalFamily::Exponential { rate: 1.5 },
                        _ => MarginalFamily::Gumbel { scale: 0.8 },
                    })
                    .collect(),
            )
            .unwrap(),
        ),
        4 => {
            let cov = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 + i as f64 * 0.5 } else { 0.3 });
            Arc::new(CovarianceModel::new(cov).unwrap())
        }
        5 => Arc::new(LagrangePenalty {
            kind: PenaltyKind::Kl,
            reference: reference.to_vec(),
            radius: 0.2,
            multiplier: 0.9,
        }),
        6 => Arc::new(LagrangePenalty {
            kind: PenaltyKind::ChiSquare,
            reference: reference.to_vec(),
            radius: 0.2,
            multiplier: 0.9,
        }),
        _ => Arc::new(Scaled {
            inner: EntropyRegularizer::new(1.0).unwrap(),
            factor: 2.5,
        }),
    }
}

const KINDS: usize = 8;

fn case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..=4).prop_flat_map(|n| (0..KINDS, row(n), row(n), row(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn concave_on_midpoints((k, p, q, r) in case()) {
        let phi = regularizer(k, p.len(), &r);
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        prop_assert!(phi.value(&mid) >= 0.5 * (phi.value(&p) + phi.value(&q)) - 1e-9, "{}", phi.name());
    }

    #[test]
    fn gradient_matches_central_differences((k, p, q, r) in case()) {
        let phi = regularizer(k, p.len(), &r);
        // tangent direction toward q
        let d: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
        let h = 1e-5 * p.iter().cloned().fold(1.0, f64::min);
        let plus: Vec<f64> = p.iter().zip(&d).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = p.iter().zip(&d).map(|(a, b)| a - h * b).collect();
        let fd = (phi.value(&plus) - phi.value(&minus)) / (2.0 * h);
        let analytic = dot(&phi.gradient(&p), &d);
        let scale = fd.abs().max(analytic.abs()).max(1e-3);
        prop_assert!((fd - analytic).abs() <= 1e-5 * scale, "{}: fd {} vs {}", phi.name(), fd, analytic);
    }

    #[test]
    fn bregman_is_nonnegative((k, p, q, r) in case()) {
        let phi = regularizer(k, p.len(), &r);
        prop_assert!(bregman_divergence(phi.as_ref(), &p, &q).unwrap() >= -1e-8, "{}", phi.name());
    }

    #[test]
    fn envelope_gradient_is_policy((k, _p, _q, r) in case(), w in prop::collection::vec(-3.0f64..3.0, 4)) {
        let n = r.len();
        let w = &w[..n];
        let phi = regularizer(k, n, &r);
        let opts = ConjugateOptions::default();
        let b = conjugate_backup(w, phi.as_ref(), &opts).unwrap();
        // skip near-ties where the conjugate has a kink
        let sorted = { let mut s = b.policy.clone(); s.sort_by(f64::total_cmp); s };
        prop_assume!(sorted[n - 1] < 1.0 - 1e-6);
        let h = 1e-4;
        for a in 0..n {
            let mut up = w.to_vec();
            let mut dn = w.to_vec();
            up[a] += h;
            dn[a] -= h;
            let fd = (conjugate_backup(&up, phi.as_ref(), &opts).unwrap().value
                - conjugate_backup(&dn, phi.as_ref(), &opts).unwrap().value) / (2.0 * h);
            prop_assert!((fd - b.policy[a]).abs() <= 1e-5, "{} a={}: {} vs {}", phi.name(), a, fd, b.policy[a]);
        }
    }

    #[test]
    fn conjugate_dominates_every_row((k, p, _q, r) in case(), w in prop::collection::vec(-3.0f64..3.0, 4)) {
        let n = p.len();
        let w = &w[..n];
        let phi = regularizer(k, n, &r);
        let b = conjugate_backup(w, phi.as_ref(), &ConjugateOptions::default()).unwrap();
        prop_assert!(b.value >= dot(w, &p) + phi.value(&p) - 1e-9);
        prop_assert!((b.value - dot(w, &b.policy) - phi.value(&b.policy)).abs() <= 1e-8 * (1.0 + b.value.abs()));
    }

    #[test]
    fn entropy_duality_gap(eta in 0.05f64..5.0, w in prop::collection::vec(-5.0f64..5.0, 2..=5)) {
        let phi = EntropyRegularizer::new(eta).unwrap();
        let closed = conjugate_backup(&w, &phi, &ConjugateOptions::default()).unwrap();
        let numeric = numeric_conjugate(&w, &phi, &ConjugateOptions::default()).unwrap();
        prop_assert!((closed.value - numeric.value).abs() <= 1e-8);
        let primal = dot(&w, &closed.policy) + phi.value(&closed.policy);
        prop_assert!((closed.value - primal).abs() <= 1e-8);
    }
}
