//! Small numerical helpers shared across modules.

use nalgebra::DMatrix;

/// Largest eigenvalue of the symmetric PSD matrix `m` by power iteration.
///
/// Stops after `max_iter` iterations or when the Rayleigh quotient changes by
/// less than `rel_tol` relative to its magnitude.
pub fn power_iteration(m: &DMatrix<f64>, max_iter: usize, rel_tol: f64) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "power iteration needs a square matrix");
    if n == 0 {
        return 0.0;
    }
    // Irregular start so no eigenvector is exactly orthogonal to it by symmetry.
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.37 * ((i as f64 + 1.0) * 0.618).fract());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let done = (next - estimate).abs() <= rel_tol * next.abs().max(f64::MIN_POSITIVE);
        estimate = next;
        if done {
            break;
        }
    }
    // One more Rayleigh quotient on the final vector; never below the last estimate.
    estimate.max(v.dot(&(m * &v)))
}

/// `ln Gamma(d / 2)` for a positive integer `d`.
pub fn ln_gamma_half(d: usize) -> f64 {
    assert!(d >= 1, "ln_gamma_half needs d >= 1");
    if d % 2 == 0 {
        // Gamma(k) = (k - 1)!
        (1..d / 2).map(|k| (k as f64).ln()).sum()
    } else {
        // Gamma(k + 1/2) = sqrt(pi) * prod_{j=1}^{k} (j - 1/2)
        let k = (d - 1) / 2;
        0.5 * std::f64::consts::PI.ln() + (1..=k).map(|j| (j as f64 - 0.5).ln()).sum::<f64>()
    }
}

/// `ln sigma(S^{d-1}) = ln(2 pi^{d/2} / Gamma(d/2))`.
pub fn ln_sphere_area(d: usize) -> f64 {
    std::f64::consts::LN_2 + 0.5 * d as f64 * std::f64::consts::PI.ln() - ln_gamma_half(d)
}
