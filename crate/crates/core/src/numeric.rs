//! Small numerical kernels: stable log-sum-exp, special functions, quadrature.

use nalgebra::DMatrix;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_of(w: &[f64]) -> f64 {
    w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_of(w: &[f64]) -> f64 {
    w.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `ln sum_a weight_a exp(w_a)` with max subtraction.
pub fn weighted_logsumexp(w: &[f64], weight: &[f64]) -> f64 {
    let m = max_of(w);
    let s: f64 = w.iter().zip(weight).map(|(x, p)| p * (x - m).exp()).sum();
    m + s.ln()
}

pub fn logsumexp(w: &[f64]) -> f64 {
    let m = max_of(w);
    m + w.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `weight_a exp(w_a) / sum`, max-subtracted.
pub fn weighted_softmax(w: &[f64], weight: &[f64]) -> Vec<f64> {
    let m = max_of(w);
    let raw: Vec<f64> = w.iter().zip(weight).map(|(x, p)| p * (x - m).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn softmax(w: &[f64]) -> Vec<f64> {
    let m = max_of(w);
    let raw: Vec<f64> = w.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// `sum p ln(p / q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// `sum (p - q)^2 / q`.
pub fn chi_square(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(pi, qi)| (pi - qi).powi(2) / qi).sum()
}

pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Exponential integral `E1(x) = int_x^inf e^-t / t dt` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x <= 1.0 {
        // power series: -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        // modified Lentz continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

fn gauss_legendre_5<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub subdivisions: usize,
}

/// Adaptive 5-point Gauss-Legendre: an interval is accepted when it agrees with
/// the sum over its two halves to within its share of `abs_tol`.
///
/// Returns `None` when the subdivision cap is hit before the tolerance is met.
pub fn adaptive_gauss_legendre<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Option<Quadrature> {
    if a == b {
        return Some(Quadrature {
            value: 0.0,
            error_estimate: 0.0,
            subdivisions: 0,
        });
    }
    let total_len = (b - a).abs();
    let mut stack = vec![(a, b, gauss_legendre_5(&f, a, b))];
    let mut value = 0.0;
    let mut error = 0.0;
    let mut subdivisions = 0;
    while let Some((lo, hi, whole)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gauss_legendre_5(&f, lo, mid);
        let right = gauss_legendre_5(&f, mid, hi);
        let diff = (left + right - whole).abs();
        let budget = abs_tol * (hi - lo).abs() / total_len;
        if diff <= budget || (hi - lo).abs() < 1e-15 * total_len {
            value += left + right;
            error += diff;
            continue;
        }
        subdivisions += 1;
        if subdivisions > max_subdivisions {
            return None;
        }
        stack.push((lo, mid, left));
        stack.push((mid, hi, right));
    }
    Some(Quadrature {
        value,
        error_estimate: error,
        subdivisions,
    })
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `V diag(sqrt(max(l, 0))) V^T` for a symmetric matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}
