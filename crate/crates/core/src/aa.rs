//! Classical archetypal analysis `min |Y - Y B A|_F^2` over column-stochastic `B` and `A`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffeo::Diffeo;
use crate::error::{check_dim, Error, Result};
use crate::simplex::{argmax_lowest, project_in_place};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AaConfig {
    pub k: usize,
    pub max_outer: usize,
    /// Projected gradient steps per block and outer iteration.
    pub inner_steps: usize,
    /// Stop when the relative objective change falls below this.
    pub rel_tol: f64,
    pub seed: u64,
}

impl AaConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_outer: 500,
            inner_steps: 5,
            rel_tol: 1e-8,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AaFactors {
    /// `N x K`; column `j` holds the data weights of archetype `j`.
    pub b: DMatrix<f64>,
    /// `K x N`; column `i` holds the archetype weights of point `i`.
    pub a: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective at initialization and after every outer iteration.
    pub trace: Vec<f64>,
}

impl AaFactors {
    /// Latent archetypes `Y B` as columns.
    pub fn archetypes(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        y * &self.b
    }
}

pub fn aa_objective(y: &DMatrix<f64>, b: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    (y - y * b * a).norm_squared()
}

/// Deterministic furthest-sum selection of `k` distinct column indices.
pub fn furthest_sum(y: &DMatrix<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = y.ncols();
    assert!(k >= 1 && k <= n, "furthest sum needs 1 <= k <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..n);
    let dist = |i: usize, j: usize| (y.column(i) - y.column(j)).norm();
    // The seed index only orients the first pick and is then discarded.
    let mut score: Vec<f64> = (0..n).map(|i| dist(i, start)).collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let first = argmax_lowest(&score);
    chosen.push(first);
    score = (0..n).map(|i| dist(i, first)).collect();
    while chosen.len() < k {
        let mut best = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b: usize| score[i] > score[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("k <= n leaves a candidate");
        chosen.push(next);
        for (i, s) in score.iter_mut().enumerate() {
            *s += dist(i, next);
        }
    }
    chosen
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.max().max(0.0)
}

/// `lambda_max(P Z^T Z P)` with `P` the centering projector on the columns of `z`.
///
/// Bounds the curvature along sum-zero directions, so the step is translation invariant.
fn centered_gram_max(z: &DMatrix<f64>) -> f64 {
    let mean = z.column_mean();
    let centered = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] - mean[i]);
    // Both Gram products share their nonzero spectrum; use the smaller one.
    if centered.nrows() < centered.ncols() {
        lambda_max(&(&centered * centered.transpose()))
    } else {
        lambda_max(&centered.tr_mul(&centered))
    }
}

fn project_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        project_in_place(col.as_mut_slice());
    }
}

fn a_steps(y: &DMatrix<f64>, b: &DMatrix<f64>, a: &mut DMatrix<f64>, steps: usize) {
    let z = y * b;
    let lip = centered_gram_max(&z);
    if lip <= 0.0 {
        return;
    }
    let gram = z.tr_mul(&z);
    let zty = z.tr_mul(y);
    for _ in 0..steps {
        let grad = &gram * &*a - &zty;
        *a -= grad / lip;
        project_columns(a);
    }
}

fn b_steps(y: &DMatrix<f64>, b: &mut DMatrix<f64>, a: &DMatrix<f64>, steps: usize, y_spread: f64) {
    let lip = y_spread * lambda_max(&(a * a.transpose()));
    if lip <= 0.0 {
        return;
    }
    for _ in 0..steps {
        let residual = y * &*b * a - y;
        let grad = y.tr_mul(&(residual * a.transpose()));
        *b -= grad / lip;
        project_columns(b);
    }
}

/// Alternating projected gradient on `A` then `B`, initialized by furthest sum.
///
/// `y` is `d x N` with one latent point per column.
pub fn aa_fit(y: &DMatrix<f64>, cfg: &AaConfig) -> Result<AaFactors> {
    let n = y.ncols();
    if n == 0 {
        return Err(Error::Empty("archetypal analysis needs data"));
    }
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::invalid(format!(
            "archetypal analysis needs 1 <= K <= N, got K = {} with N = {n}",
            cfg.k
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("archetypal analysis input".into()));
    }
    let k = cfg.k;
    let mut b = DMatrix::zeros(n, k);
    for (j, i) in furthest_sum(y, k, cfg.seed).into_iter().enumerate() {
        b[(i, j)] = 1.0;
    }
    let mut a = DMatrix::from_element(k, n, 1.0 / k as f64);
    a_steps(y, &b, &mut a, 1);
    let y_spread = centered_gram_max(y);
    let mut objective = aa_objective(y, &b, &a);
    let mut trace = vec![objective];
    let mut iterations = 0;
    while iterations < cfg.max_outer {
        iterations += 1;
        a_steps(y, &b, &mut a, cfg.inner_steps);
        b_steps(y, &mut b, &a, cfg.inner_steps, y_spread);
        let next = aa_objective(y, &b, &a);
        trace.push(next);
        let change = (objective - next).abs() / objective.max(f64::MIN_POSITIVE);
        objective = next;
        if change < cfg.rel_tol {
            break;
        }
    }
    Ok(AaFactors {
        b,
        a,
        objective,
        iterations,
        trace,
    })
}

/// Ambient archetypes `phi_a^{-1}(Y b_j)` as columns.
pub fn decode_archetypes(phi_a: &dyn Diffeo, y: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(phi_a.dim(), y.nrows())?;
    check_dim(y.ncols(), b.nrows())?;
    let latent = y * b;
    let mut out = DMatrix::zeros(y.nrows(), b.ncols());
    for (j, col) in latent.column_iter().enumerate() {
        out.set_column(j, &phi_a.inverse(&DVector::from(col)));
    }
    Ok(out)
}

/// `argmax_j A_{ji}` per column; ties go to the lowest `j`.
pub fn assign_labels(a: &DMatrix<f64>) -> Vec<usize> {
    a.column_iter()
        .map(|col| argmax_lowest(col.as_slice()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffeo::Identity;

    fn triangle_repeated() -> DMatrix<f64> {
        let v = [[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]];
        DMatrix::from_fn(2, 12, |i, j| v[j % 3][i])
    }

    #[test]
    fn exact_vertices_are_recovered() {
        let y = triangle_repeated();
        let f = aa_fit(&y, &AaConfig::new(3, 1)).unwrap();
        assert!(f.objective < 1e-12);
        let z = f.archetypes(&y);
        for v in [[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]] {
            let best = z
                .column_iter()
                .map(|c| ((c[0] - v[0]).powi(2) + (c[1] - v[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6);
        }
    }

    #[test]
    fn too_many_archetypes() {
        let y = DMatrix::zeros(2, 3);
        assert!(aa_fit(&y, &AaConfig::new(4, 0)).is_err());
    }

    #[test]
    fn labels_break_ties_low() {
        let a = DMatrix::from_column_slice(3, 2, &[0.2, 0.5, 0.3, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(assign_labels(&a), vec![1, 0]);
    }

    #[test]
    fn decoding_with_identity_picks_points() {
        let y = triangle_repeated();
        let mut b = DMatrix::zeros(12, 1);
        b[(4, 0)] = 1.0;
        let z = decode_archetypes(&Identity::new(2), &y, &b).unwrap();
        assert_eq!(z.column(0), y.column(4));
    }
}
