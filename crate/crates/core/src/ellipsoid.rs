//! Ellipsoidal radial functions and the data-enclosing ellipsoids they are fitted from.
//!
//! A branch of a star body is the smooth intersection of an off-centered
//! ellipsoid around the branch mean and a centered ellipsoid through the
//! origin; the star body is the smooth union of its branches.

use nalgebra::{DMatrix, DVector};

use crate::diffeo::Vector;
use crate::error::{check_dim, Error, Result};
use crate::star::RadialFn;

/// Default lower bound on the first eigenvalue; must exceed 1.
pub const DEFAULT_ALPHA: f64 = 1.1;
/// Default lower bound on the remaining eigenvalues.
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Slack allowed when checking the fitted-ellipsoid postconditions.
pub const POSTCONDITION_SLACK: f64 = 1e-9;

/// Means below this norm are treated as zero by the fits.
const ZERO_CENTER: f64 = 1e-12;

/// `{x : (x - c)^T Q^{-1} (x - c) <= 1}` with `Q = U diag(lambda) U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    frame: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    center: Vector,
    kappa: f64,
}

impl Ellipsoid {
    /// `frame` columns must be orthonormal, eigenvalues positive, and the origin
    /// strictly interior (`c^T Q^{-1} c < 1`).
    pub fn new(frame: DMatrix<f64>, eigenvalues: DVector<f64>, center: Vector) -> Result<Self> {
        let d = center.len();
        if d == 0 {
            return Err(Error::Empty("ellipsoid dimension"));
        }
        check_dim(d, frame.nrows())?;
        check_dim(d, frame.ncols())?;
        check_dim(d, eigenvalues.len())?;
        if eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("ellipsoid eigenvalues must be positive and finite"));
        }
        let gram = frame.tr_mul(&frame);
        let off = (gram - DMatrix::identity(d, d)).amax();
        if !(off <= 1e-8) {
            return Err(Error::invalid(format!(
                "ellipsoid frame is not orthonormal (deviation {off:e})"
            )));
        }
        let mut e = Self {
            frame,
            eigenvalues,
            center,
            kappa: 0.0,
        };
        e.kappa = e.quadratic(&e.center);
        if !(e.kappa < 1.0) {
            return Err(Error::invalid(format!(
                "origin is not interior to the ellipsoid (c^T Q^-1 c = {})",
                e.kappa
            )));
        }
        Ok(e)
    }

    /// `r^2 I` centered at `c`.
    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        let d = center.len();
        Self::new(
            DMatrix::identity(d, d),
            DVector::from_element(d, radius * radius),
            center,
        )
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    /// `c^T Q^{-1} c`.
    pub fn center_quadratic(&self) -> f64 {
        self.kappa
    }

    /// `Q^{-1} v`.
    pub fn solve(&self, v: &Vector) -> Vector {
        let coords = self.frame.tr_mul(v).component_div(&self.eigenvalues);
        &self.frame * coords
    }

    /// `v^T Q^{-1} v`.
    pub fn quadratic(&self, v: &Vector) -> f64 {
        let coords = self.frame.tr_mul(v);
        coords
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(c, l)| c * c / l)
            .sum()
    }

    /// The dense matrix `Q`.
    pub fn shape(&self) -> DMatrix<f64> {
        &self.frame * DMatrix::from_diagonal(&self.eigenvalues) * self.frame.transpose()
    }

    /// Scales every eigenvalue by `factor`; fails if the origin leaves the interior.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.frame.clone(),
            &self.eigenvalues * factor,
            self.center.clone(),
        )
    }

    /// Boundary distance `sup{t >= 0 : t s in E}` along a unit direction.
    pub fn radial(&self, s: &Vector) -> f64 {
        let qs = self.solve(s);
        let a = s.dot(&qs);
        let b = self.center.dot(&qs);
        let k = 1.0 - self.kappa;
        let root = (b * b + a * k).sqrt();
        if b >= 0.0 {
            (b + root) / a
        } else {
            // Same root without cancellation.
            k / (root - b)
        }
    }

    /// Tangential gradient of `x -> radial(x / |x|)` at the unit vector `s`.
    pub fn radial_grad(&self, s: &Vector) -> Vector {
        let t = self.radial(s);
        let w = self.solve(&(s * t - &self.center));
        // Implicit differentiation of (t s - c)^T Q^{-1} (t s - c) = 1.
        let g = &w * (-t / s.dot(&w));
        &g - s * s.dot(&g)
    }

    /// `(min, max)` bounds of the radial function over the sphere.
    pub fn radial_bounds(&self) -> (f64, f64) {
        let lmin = self.eigenvalues.min();
        let lmax = self.eigenvalues.max();
        let k = self.kappa.sqrt();
        (lmin.sqrt() * (1.0 - k), lmax.sqrt() * (1.0 + k))
    }
}

/// Postcondition values of a fitted ellipsoid on samples `y` (rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitCheck {
    /// `(1/n) sum (y_i - c)^T Q^{-1} (y_i - c)` with `c` the ellipsoid center.
    pub mean_quadratic: f64,
    /// `m^T Q^{-1} m` with `m` the sample mean.
    pub mean_point_quadratic: f64,
}

impl FitCheck {
    pub fn holds(&self) -> bool {
        self.mean_quadratic <= 1.0 + POSTCONDITION_SLACK && self.mean_point_quadratic < 1.0
    }
}

pub fn check_fit(y: &DMatrix<f64>, e: &Ellipsoid) -> Result<FitCheck> {
    check_dim(e.dim(), y.ncols())?;
    if y.nrows() == 0 {
        return Err(Error::Empty("fit check needs samples"));
    }
    let n = y.nrows() as f64;
    let mut total = 0.0;
    for row in y.row_iter() {
        total += e.quadratic(&(row.transpose() - e.center()));
    }
    let mean = y.row_mean().transpose();
    Ok(FitCheck {
        mean_quadratic: total / n,
        mean_point_quadratic: e.quadratic(&mean),
    })
}

fn validate_fit_args(y: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<()> {
    if y.nrows() == 0 || y.ncols() == 0 {
        return Err(Error::Empty("ellipsoid fit needs at least one sample"));
    }
    if !(alpha > 1.0 && beta > 0.0 && beta < alpha) {
        return Err(Error::invalid(format!(
            "ellipsoid fit needs alpha > 1 and 0 < beta < alpha, got alpha = {alpha}, beta = {beta}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ellipsoid fit input".into()));
    }
    Ok(())
}

/// Orthonormal `d x (d-1)` basis of the complement of the unit vector `u`.
fn complement_basis(u: &Vector) -> DMatrix<f64> {
    let d = u.len();
    // Householder reflection sending e_1 to +-u; its other columns span u^perp.
    let mut h = Vector::zeros(d);
    h[0] = 1.0;
    if u[0] <= 0.0 {
        h -= u;
    } else {
        h += u;
    }
    let hh = h.norm_squared();
    let reflect = DMatrix::identity(d, d) - &h * h.transpose() * (2.0 / hh);
    reflect.columns(1, d - 1).into_owned()
}

/// Eigenpairs of `B^T Y^T Y B`, sorted by decreasing eigenvalue.
fn projected_spectrum(y: &DMatrix<f64>, basis: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let coords = y * basis;
    let gram = coords.tr_mul(&coords);
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vecs = DMatrix::from_fn(basis.ncols(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    let vals = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    (basis * vecs, vals)
}

/// Frame `[c_hat, W]` and eigenvalues with the leading one given.
fn assemble(
    y: &DMatrix<f64>,
    direction: &Vector,
    first: f64,
    beta: f64,
    center: Vector,
) -> Result<Ellipsoid> {
    let d = y.ncols();
    let n = y.nrows() as f64;
    let mut frame = DMatrix::zeros(d, d);
    frame.set_column(0, direction);
    let mut eigenvalues = DVector::zeros(d);
    eigenvalues[0] = first;
    if d > 1 {
        let basis = complement_basis(direction);
        let (vecs, vals) = projected_spectrum(y, &basis);
        for k in 0..d - 1 {
            frame.set_column(k + 1, &vecs.column(k));
            eigenvalues[k + 1] = (d as f64 / n * vals[k]).max(beta);
        }
    }
    Ellipsoid::new(frame, eigenvalues, center)
}

/// Centered fit in the eigenframe of `Y^T Y`; used when the sample mean vanishes.
fn fit_centered_eigenframe(y: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<Ellipsoid> {
    let d = y.ncols();
    let n = y.nrows() as f64;
    let (frame, vals) = projected_spectrum(y, &DMatrix::identity(d, d));
    let eigenvalues = DVector::from_fn(d, |k, _| {
        let floor = if k == 0 { alpha } else { beta };
        (d as f64 / n * vals[k]).max(floor)
    });
    Ellipsoid::new(frame, eigenvalues, Vector::zeros(d))
}

/// Ellipsoid around the sample mean `c` enclosing the samples (rows of `y`) on average.
///
/// The leading axis points along `c`, with eigenvalue
/// `max{(d/n) sum (c_hat^T (y - c))^2, alpha max(1, |c|^2)}`; the remaining axes
/// are the principal directions of the samples projected onto `c^perp`, with
/// eigenvalues `max{(d/n) sigma_k^2, beta}`. Falls back to [`fit_centered`]
/// when `|c| < 1e-12`.
pub fn fit_offcentered(y: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<Ellipsoid> {
    validate_fit_args(y, alpha, beta)?;
    let c = y.row_mean().transpose();
    let norm = c.norm();
    if norm < ZERO_CENTER {
        return fit_centered_eigenframe(y, alpha, beta);
    }
    let d = y.ncols() as f64;
    let n = y.nrows() as f64;
    let dir = &c / norm;
    let spread: f64 = y
        .row_iter()
        .map(|row| dir.dot(&(row.transpose() - &c)).powi(2))
        .sum();
    // The floor alpha |c|^2 keeps the origin interior: c^T Q^{-1} c = |c|^2 / lambda_1.
    let first = (d / n * spread).max(alpha * norm.powi(2).max(1.0));
    assemble(y, &dir, first, beta, c)
}

/// Origin-centered ellipsoid enclosing the samples (rows of `y`) on average.
///
/// The leading axis points along the sample mean with eigenvalue
/// `max{(d/n) sum (c_hat^T y)^2, alpha}`.
pub fn fit_centered(y: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<Ellipsoid> {
    validate_fit_args(y, alpha, beta)?;
    let c = y.row_mean().transpose();
    let norm = c.norm();
    if norm < ZERO_CENTER {
        return fit_centered_eigenframe(y, alpha, beta);
    }
    let d = y.ncols() as f64;
    let n = y.nrows() as f64;
    let dir = &c / norm;
    let spread: f64 = y.row_iter().map(|row| dir.dot(&row.transpose()).powi(2)).sum();
    let first = (d / n * spread).max(alpha);
    assemble(y, &dir, first, beta, Vector::zeros(y.ncols()))
}

/// Self-weighted smooth maximum `sum v_k e^{v_k/T} / sum e^{v_k/T}` and its gradient.
pub fn softmax_with_grad(values: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    assert!(temperature > 0.0, "temperature must be positive");
    assert!(!values.is_empty(), "softmax needs at least one value");
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = values.iter().map(|v| ((v - top) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let value = values
        .iter()
        .zip(&weights)
        .map(|(v, w)| v * w)
        .sum::<f64>()
        / total;
    let grad = values
        .iter()
        .zip(&weights)
        .map(|(v, w)| w / total * (1.0 + (v - value) / temperature))
        .collect();
    (value, grad)
}

pub fn softmax_k(values: &[f64], temperature: f64) -> f64 {
    softmax_with_grad(values, temperature).0
}

/// Self-weighted smooth minimum of two values.
pub fn softmin2(a: f64, b: f64, temperature: f64) -> f64 {
    -softmax_k(&[-a, -b], temperature)
}

fn softmin2_with_grad(a: f64, b: f64, temperature: f64) -> (f64, [f64; 2]) {
    let (v, g) = softmax_with_grad(&[-a, -b], temperature);
    (-v, [g[0], g[1]])
}

/// Smooth intersection of an off-centered and a centered ellipsoid.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRadial {
    offcentered: Ellipsoid,
    centered: Ellipsoid,
    t_min: f64,
}

impl BranchRadial {
    pub fn new(offcentered: Ellipsoid, centered: Ellipsoid, t_min: f64) -> Result<Self> {
        check_dim(offcentered.dim(), centered.dim())?;
        if !(t_min > 0.0 && t_min.is_finite()) {
            return Err(Error::invalid("softmin temperature must be positive"));
        }
        Ok(Self {
            offcentered,
            centered,
            t_min,
        })
    }

    /// Fits both ellipsoids to the latent samples of one branch.
    pub fn fit(y: &DMatrix<f64>, alpha: f64, beta: f64, t_min: f64) -> Result<Self> {
        Self::new(
            fit_offcentered(y, alpha, beta)?,
            fit_centered(y, alpha, beta)?,
            t_min,
        )
    }

    pub fn offcentered(&self) -> &Ellipsoid {
        &self.offcentered
    }

    pub fn centered(&self) -> &Ellipsoid {
        &self.centered
    }

    pub fn temperature(&self) -> f64 {
        self.t_min
    }
}

impl RadialFn for BranchRadial {
    fn dim(&self) -> usize {
        self.centered.dim()
    }

    fn eval(&self, s: &Vector) -> f64 {
        softmin2(
            self.offcentered.radial(s),
            self.centered.radial(s),
            self.t_min,
        )
    }

    fn grad(&self, s: &Vector) -> Vector {
        let (_, [wo, wc]) = softmin2_with_grad(
            self.offcentered.radial(s),
            self.centered.radial(s),
            self.t_min,
        );
        self.offcentered.radial_grad(s) * wo + self.centered.radial_grad(s) * wc
    }

    fn bounds(&self) -> (f64, f64) {
        let (lo_o, hi_o) = self.offcentered.radial_bounds();
        let (lo_c, hi_c) = self.centered.radial_bounds();
        // min <= softmin2 <= min + T / e.
        (
            lo_o.min(lo_c),
            hi_o.min(hi_c) + self.t_min / std::f64::consts::E,
        )
    }
}

/// Smooth union of branch radial functions.
#[derive(Debug, Clone, PartialEq)]
pub struct StarRadial {
    branches: Vec<BranchRadial>,
    t_max: f64,
}

impl StarRadial {
    pub fn new(branches: Vec<BranchRadial>, t_max: f64) -> Result<Self> {
        let first = branches.first().ok_or(Error::Empty("star radial needs a branch"))?;
        let d = first.dim();
        for b in &branches {
            check_dim(d, b.dim())?;
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::invalid("softmax temperature must be positive"));
        }
        Ok(Self { branches, t_max })
    }

    pub fn branches(&self) -> &[BranchRadial] {
        &self.branches
    }

    pub fn temperature(&self) -> f64 {
        self.t_max
    }
}

impl RadialFn for StarRadial {
    fn dim(&self) -> usize {
        self.branches[0].dim()
    }

    fn eval(&self, s: &Vector) -> f64 {
        let values: Vec<f64> = self.branches.iter().map(|b| b.eval(s)).collect();
        softmax_k(&values, self.t_max)
    }

    fn grad(&self, s: &Vector) -> Vector {
        let values: Vec<f64> = self.branches.iter().map(|b| b.eval(s)).collect();
        let (_, weights) = softmax_with_grad(&values, self.t_max);
        self.branches
            .iter()
            .zip(weights)
            .fold(Vector::zeros(self.dim()), |acc, (b, w)| acc + b.grad(s) * w)
    }

    fn bounds(&self) -> (f64, f64) {
        // min_k v_k <= softmax <= max_k v_k.
        self.branches.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), b| {
            let (l, h) = b.bounds();
            (lo.min(l), hi.max(h))
        })
    }
}
