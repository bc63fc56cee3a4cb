//! Dense oracles for the convex-concave surrogate on small problems.

use rand::Rng;
use sparsenas::bayes::{update_omega, update_switch};

/// Symmetric positive-definite solve by Cholesky.
pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let l = cholesky(a);
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let rhs = if i == col { 1.0 } else { 0.0 };
            y[i] = (rhs - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
        }
        for i in 0..n {
            inv[i][col] = x[i];
        }
    }
    inv
}

pub fn log_det(a: &[Vec<f64>]) -> f64 {
    cholesky(a).iter().enumerate().map(|(i, row)| 2.0 * row[i].ln()).sum()
}

/// `½wᵀAw − bᵀw + Σ w²/s + ln|I + S^½ A S^½|`, the surrogate written so that
/// zero switches (with zero weights) stay finite.
pub fn surrogate(a: &[Vec<f64>], b: &[f64], w: &[f64], s: &[f64]) -> f64 {
    let n = w.len();
    let quad: f64 = (0..n).map(|i| (0..n).map(|j| w[i] * a[i][j] * w[j]).sum::<f64>()).sum::<f64>() * 0.5;
    let lin: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
    let prior: f64 = w.iter().zip(s).map(|(&x, &v)| if v > 0.0 { x * x / v } else { 0.0 }).sum();
    let m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64 + s[i].sqrt() * a[i][j] * s[j].sqrt()).collect())
        .collect();
    quad - lin + prior + log_det(&m)
}

/// Exact minimizer of `½wᵀAw − bᵀw + 2Σ ω|w|` by cyclic coordinate descent.
pub fn weighted_lasso(a: &[Vec<f64>], b: &[f64], omega: &[f64], frozen: &[bool], mut w: Vec<f64>) -> Vec<f64> {
    let n = w.len();
    for _ in 0..100_000 {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            if frozen[i] {
                w[i] = 0.0;
                continue;
            }
            let r = b[i] - (0..n).filter(|&j| j != i).map(|j| a[i][j] * w[j]).sum::<f64>();
            let t = 2.0 * omega[i];
            let next = if r > t {
                (r - t) / a[i][i]
            } else if r < -t {
                (r + t) / a[i][i]
            } else {
                0.0
            };
            delta = delta.max((next - w[i]).abs());
            w[i] = next;
        }
        if delta < 1e-15 {
            break;
        }
    }
    w
}

/// Alternates the reweighted lasso with the switch update on a random
/// `n`-dimensional quadratic. Returns the surrogate after the warm start and
/// after each iteration, plus the number of switches that reached zero.
pub fn run(seed: u64, n: usize, iterations: usize) -> (Vec<f64>, usize) {
    let mut rng = super::rng(seed);
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| m[i][k] * m[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..n).map(|i| if i < 3 { rng.random_range(2.0..4.0) } else { rng.random_range(-0.3..0.3) }).collect();
    let mut s = vec![1.0; n];
    let mut w = weighted_lasso(&a, &b, &vec![0.0; n], &vec![false; n], vec![0.0; n]);
    let mut costs = vec![surrogate(&a, &b, &w, &s)];
    for _ in 0..iterations {
        // C = S^½ (I + S^½ A S^½)⁻¹ S^½, diagonal only.
        let inner: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (i == j) as u8 as f64 + s[i].sqrt() * a[i][j] * s[j].sqrt()).collect())
            .collect();
        let inv = inverse(&inner);
        let frozen: Vec<bool> = s.iter().map(|&v| v == 0.0).collect();
        let omega: Vec<f64> = (0..n)
            .map(|i| if frozen[i] { 0.0 } else { update_omega(s[i], s[i] * inv[i][i], 1e-300).unwrap() })
            .collect();
        w = weighted_lasso(&a, &b, &omega, &frozen, w);
        s = (0..n)
            .map(|i| if frozen[i] { 0.0 } else { update_switch(w[i], omega[i], 1e-300, f64::INFINITY) })
            .collect();
        costs.push(surrogate(&a, &b, &w, &s));
    }
    (costs, s.iter().filter(|&&v| v == 0.0).count())
}
