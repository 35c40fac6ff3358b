//! Contraction, translation and monotonicity of every Bellman operator.

use nestmdp::catalog::{random_operator, OperatorKind};
use nestmdp::solver::bellman_sweep;
use nestmdp::{random_mdp, MdpModel};
use proptest::prelude::*;

fn sweep(model: &MdpModel, kind: OperatorKind, seed: u64, v: &[f64]) -> Vec<f64> {
    let op = random_operator(kind, model.num_states(), model.num_actions(), seed).unwrap();
    bellman_sweep(model, op.as_ref(), v).unwrap().0
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn setup() -> impl Strategy<Value = (usize, usize, f64, u64, usize)> {
    (
        1usize..=8,
        2usize..=4,
        prop::sample::select(vec![0.5, 0.9]),
        any::<u64>(),
        0..OperatorKind::ALL.len(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn contraction((ns, na, gamma, seed, k) in setup(), scale in 0.1f64..20.0) {
        let kind = OperatorKind::ALL[k];
        let model = random_mdp(ns, na, gamma, (-5.0, 5.0), seed).unwrap();
        let v: Vec<f64> = (0..ns).map(|i| ((i as f64 + 1.0) * 1.7).sin() * scale).collect();
        let u: Vec<f64> = (0..ns).map(|i| ((i as f64 + 3.0) * 0.9).cos() * scale).collect();
        let tv = sweep(&model, kind, seed, &v);
        let tu = sweep(&model, kind, seed, &u);
        prop_assert!(sup(&tv, &tu) <= gamma * sup(&v, &u) + 1e-9, "{}", kind.label());
    }

    #[test]
    fn translation((ns, na, gamma, seed, k) in setup(), c in -50.0f64..50.0) {
        let kind = OperatorKind::ALL[k];
        let model = random_mdp(ns, na, gamma, (-5.0, 5.0), seed).unwrap();
        let v: Vec<f64> = (0..ns).map(|i| (i as f64 * 2.3).sin() * 3.0).collect();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let tv = sweep(&model, kind, seed, &v);
        let ts = sweep(&model, kind, seed, &shifted);
        for (a, b) in tv.iter().zip(&ts) {
            prop_assert!((b - a - gamma * c).abs() <= 1e-12 * (1.0 + c.abs() + a.abs()), "{}: {} vs {}", kind.label(), b - a, gamma * c);
        }
    }

    #[test]
    fn monotonicity((ns, na, gamma, seed, k) in setup(), bumps in prop::collection::vec(0.0f64..3.0, 8)) {
        let kind = OperatorKind::ALL[k];
        let model = random_mdp(ns, na, gamma, (-5.0, 5.0), seed).unwrap();
        let v: Vec<f64> = (0..ns).map(|i| (i as f64 * 1.3).cos() * 4.0).collect();
        let up: Vec<f64> = v.iter().zip(&bumps).map(|(x, b)| x + b).collect();
        let tv = sweep(&model, kind, seed, &v);
        let tu = sweep(&model, kind, seed, &up);
        for (a, b) in tv.iter().zip(&tu) {
            prop_assert!(b - a >= -1e-12 * (1.0 + a.abs()), "{}: {} < {}", kind.label(), b, a);
        }
    }
}
