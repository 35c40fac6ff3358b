//! Feasibility, radius monotonicity and grid agreement of constrained backups.

use nestmdp::constrained::{ct_backup, grid_oracle_backup, l2_projected_ascent, ConstraintSet, CtOptions};
use nestmdp::numeric::dot;
use proptest::prelude::*;

fn row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02f64..1.0, n).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect()
    })
}

fn ball(kind: usize, reference: Vec<f64>, radius: f64) -> ConstraintSet {
    match kind {
        0 => ConstraintSet::KlBall { reference, radius },
        1 => ConstraintSet::L1Ball {
            reference,
            radius: radius.min(2.0),
        },
        _ => ConstraintSet::L2Ball { reference, radius },
    }
}

fn case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, f64)> {
    (2usize..=5).prop_flat_map(|n| (0..3usize, row(n), prop::collection::vec(-4.0f64..4.0, n), 0.0f64..1.5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn policy_is_feasible_and_beats_reference((k, r, w, c) in case()) {
        let set = ball(k, r.clone(), c);
        let b = ct_backup(&w, &set, &CtOptions::default()).unwrap();
        prop_assert!(set.violation(&b.policy) <= 1e-9, "{}: violation {}", set.kind(), set.violation(&b.policy));
        prop_assert!((b.policy.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(b.policy.iter().all(|p| *p >= 0.0));
        prop_assert!(b.value >= dot(&w, &r) - 1e-12);
        prop_assert!(b.value <= w.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12);
        prop_assert!((b.value - dot(&w, &b.policy)).abs() <= 1e-9);
    }

    #[test]
    fn value_is_monotone_in_radius((k, r, w, c) in case(), extra in 0.0f64..1.0) {
        let small = ct_backup(&w, &ball(k, r.clone(), c), &CtOptions::default()).unwrap();
        let large = ct_backup(&w, &ball(k, r, c + extra), &CtOptions::default()).unwrap();
        prop_assert!(large.value >= small.value - 1e-10);
    }

    #[test]
    fn matches_two_action_grid(k in 0..3usize, r in row(2), w in prop::collection::vec(-4.0f64..4.0, 2), c in 0.01f64..1.5) {
        let set = ball(k, r, c);
        let res = 20_000;
        let grid = grid_oracle_backup(&w, &set, res).unwrap();
        let exact = ct_backup(&w, &set, &CtOptions::default()).unwrap();
        let wmax = w.iter().map(|x| x.abs()).fold(0.0, f64::max);
        prop_assert!(exact.value >= grid.value - 1e-10);
        prop_assert!(exact.value - grid.value <= (wmax / res as f64).max(1e-5) * 2.0);
    }

    #[test]
    fn l2_threshold_and_projected_ascent_agree(r in row(3), w in prop::collection::vec(-2.0f64..2.0, 3), c in 0.01f64..1.0) {
        let exact = ct_backup(&w, &ConstraintSet::L2Ball { reference: r.clone(), radius: c }, &CtOptions::default()).unwrap();
        let pa = l2_projected_ascent(&w, &r, c, 1e-12, 20_000).unwrap();
        prop_assert!(pa.converged);
        prop_assert!((exact.value - pa.value).abs() <= 1e-6, "{} vs {}", exact.value, pa.value);
    }
}
