//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use proptest::prelude::*;

/// Indices ordered by eigenvalue, largest first, lower index first on ties.
pub fn descending_order(lambda: &[f64]) -> Vec<usize> {
    let mut keyed: Vec<(usize, f64)> = lambda.iter().copied().enumerate().collect();
    // Insertion sort keeps the comparison rule explicit.
    for i in 1..keyed.len() {
        let mut j = i;
        while j > 0 && keyed[j].1 > keyed[j - 1].1 {
            keyed.swap(j, j - 1);
            j -= 1;
        }
    }
    keyed.into_iter().map(|(i, _)| i).collect()
}

/// `(1/k) sum_{i>k} theta_{pi_i}^2`, summed directly.
pub fn brute_h(theta: &[f64], lambda: &[f64], k: usize) -> f64 {
    let order = descending_order(lambda);
    let tail: f64 = order[k..].iter().map(|&i| theta[i] * theta[i]).sum();
    tail / k as f64
}

/// Smallest `k` in `1..=d` with `H(k) <= tau`, by exhaustive scan.
pub fn brute_esd(theta: &[f64], lambda: &[f64], tau: f64) -> usize {
    (1..=theta.len())
        .find(|&k| brute_h(theta, lambda, k) <= tau)
        .expect("H(d) = 0")
}

/// Analytic PC risk `min_k k sigma^2 + sum_{i>k} theta_{pi_i}^2`.
pub fn brute_pc_risk(theta: &[f64], lambda: &[f64], sigma2: f64) -> f64 {
    let order = descending_order(lambda);
    (0..=theta.len())
        .map(|k| k as f64 * sigma2 + order[k..].iter().map(|&i| theta[i] * theta[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Signal and spectrum of matching length; the spectrum has ties now and then.
pub fn instance(max_d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_d).prop_flat_map(|d| {
        (
            prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => -3.0f64..3.0], d),
            prop::collection::vec(prop_oneof![1 => Just(1.0), 1 => Just(0.5), 4 => 1e-4f64..10.0], d),
        )
    })
}

/// Spearman correlation from scratch: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn rank(v: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; v.len()];
        for i in 0..v.len() {
            let less = v.iter().filter(|&&w| w < v[i]).count() as f64;
            let eq = v.iter().filter(|&&w| w == v[i]).count() as f64;
            r[i] = less + (eq + 1.0) / 2.0;
        }
        r
    }
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
