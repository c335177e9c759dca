//! Riemannian archetypal mappings.
//!
//! A point `x` is projected onto the set of geodesic convex combinations of the
//! archetypes, `{phi^{-1}(phi(Z) w) : w in simplex}`. The relaxed problem
//! measures the residual in `phi`-coordinates and is a convex simplex-constrained
//! least-squares problem; the refined problem measures it in the ambient `l2`
//! norm and is solved by projected gradient with Armijo backtracking.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::diffeo::{Diffeo, Vector};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{iso_log, iso_log_scale, DEFAULT_ARC_KNOTS};
use crate::linalg::power_iteration;
use crate::simplex::{argmax_lowest, project_in_place, project_simplex, SimplexWeights};

/// Archetypes `z_j` (columns) with their cached embeddings `phi(z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeSet {
    points: DMatrix<f64>,
    embedded: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    lipschitz: f64,
}

impl ArchetypeSet {
    /// `points` is `d x K`; `labels`, when given, holds one class id per archetype.
    pub fn new(phi: &dyn Diffeo, points: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        check_dim(phi.dim(), points.nrows())?;
        if points.ncols() == 0 {
            return Err(Error::Empty("archetype set"));
        }
        if let Some(l) = &labels {
            check_dim(points.ncols(), l.len())?;
        }
        let mut embedded = DMatrix::zeros(points.nrows(), points.ncols());
        for (j, col) in points.column_iter().enumerate() {
            embedded.set_column(j, &phi.forward(&col.into_owned()));
        }
        if embedded.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("archetype embedding".into()));
        }
        let lipschitz = power_iteration(&embedded.tr_mul(&embedded), 50, 1e-10);
        Ok(Self {
            points,
            embedded,
            labels,
            lipschitz,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn archetype(&self, j: usize) -> Vector {
        self.points.column(j).into_owned()
    }

    pub fn embedded(&self) -> &DMatrix<f64> {
        &self.embedded
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Largest eigenvalue of `phi(Z)^T phi(Z)`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `phi^{-1}(phi(Z) w)`.
    pub fn combine(&self, phi: &dyn Diffeo, w: &DVector<f64>) -> Vector {
        phi.inverse(&(&self.embedded * w))
    }

    /// Numerical rank of `[phi(z_j) - phi(z_K)]_{j < K}`, at most `K - 1`.
    pub fn interior_rank(&self, rel_tol: f64) -> usize {
        let k = self.len();
        if k < 2 {
            return 0;
        }
        let last = self.embedded.column(k - 1);
        let diffs = DMatrix::from_fn(self.dim(), k - 1, |i, j| self.embedded[(i, j)] - last[i]);
        let sv = diffs.singular_values();
        let top = sv.max();
        if top == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > rel_tol * top).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamConfig {
    /// Stop when `|w_{k+1} - w_k|_inf` falls below this.
    pub relaxed_tol: f64,
    pub relaxed_max_iter: usize,
    pub refine_tol: f64,
    pub refine_max_iter: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub min_step: f64,
    /// Arc-length knots for the iso-corrected weights.
    pub arc_knots: usize,
}

impl Default for RamConfig {
    fn default() -> Self {
        Self {
            relaxed_tol: 1e-3,
            relaxed_max_iter: 1000,
            refine_tol: 1e-10,
            refine_max_iter: 5000,
            armijo_c: 1e-4,
            shrink: 0.5,
            min_step: 1e-14,
            arc_knots: DEFAULT_ARC_KNOTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The line search shrank the step below the floor.
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedResult {
    pub weights: SimplexWeights,
    pub iterations: usize,
    pub converged: bool,
    pub step: f64,
    /// `|phi(x) - phi(Z) w|^2` before the first and after every iteration.
    pub objective_trace: Vec<f64>,
}

/// Projected gradient on `|phi(x) - phi(Z) w|^2` from uniform weights, step `1 / L`.
pub fn relaxed_ram(
    phi: &dyn Diffeo,
    archetypes: &ArchetypeSet,
    x: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<RelaxedResult> {
    check_dim(archetypes.dim(), x.len())?;
    let target = phi.forward(x);
    relaxed_from_embedding(archetypes, &target, tol, max_iter)
}

fn relaxed_from_embedding(
    archetypes: &ArchetypeSet,
    target: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<RelaxedResult> {
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedded point".into()));
    }
    let e = archetypes.embedded();
    let k = archetypes.len();
    let step = if archetypes.lipschitz() > 0.0 {
        1.0 / archetypes.lipschitz()
    } else {
        1.0
    };
    let mut w = DVector::from_element(k, 1.0 / k as f64);
    let mut residual = e * &w - target;
    let mut trace = vec![residual.norm_squared()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let grad = e.tr_mul(&residual);
        let mut next = &w - grad * step;
        project_in_place(next.as_mut_slice());
        let change = (&next - &w).amax();
        w = next;
        residual = e * &w - target;
        trace.push(residual.norm_squared());
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(RelaxedResult {
        weights: SimplexWeights::new(w)?,
        iterations,
        converged,
        step,
        objective_trace: trace,
    })
}

/// `|phi^{-1}(phi(Z) w) - x|_2^2`.
pub fn ram_objective(phi: &dyn Diffeo, archetypes: &ArchetypeSet, x: &Vector, w: &DVector<f64>) -> f64 {
    (archetypes.combine(phi, w) - x).norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub weights: SimplexWeights,
    pub iterations: usize,
    pub termination: Termination,
    /// Last accepted step size.
    pub step: f64,
    /// RAM objective at the start and after every accepted iteration.
    pub objective_trace: Vec<f64>,
}

/// Projected gradient with Armijo backtracking on the RAM objective.
///
/// Each iteration starts the line search at `1 / L`, the relaxed step.
pub fn ram_refine(
    phi: &dyn Diffeo,
    archetypes: &ArchetypeSet,
    x: &Vector,
    init: &SimplexWeights,
    cfg: &RamConfig,
) -> Result<RefineResult> {
    check_dim(archetypes.dim(), x.len())?;
    check_dim(archetypes.len(), init.len())?;
    let e = archetypes.embedded();
    let initial_step = if archetypes.lipschitz() > 0.0 {
        1.0 / archetypes.lipschitz()
    } else {
        1.0
    };
    let eval = |w: &DVector<f64>| -> (Vector, Vector, f64) {
        let y = e * w;
        let p = phi.inverse(&y);
        let r = &p - x;
        let f = 0.5 * r.norm_squared();
        (y, r, f)
    };
    let mut w = init.as_vector().clone();
    let (mut y, mut r, mut f) = eval(&w);
    if !f.is_finite() {
        return Err(Error::NonFinite("RAM objective at initialization".into()));
    }
    let mut trace = vec![2.0 * f];
    let mut step = initial_step;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    while iterations < cfg.refine_max_iter {
        iterations += 1;
        let grad = e.tr_mul(&phi.inverse_vjp(&y, &r));
        let mut alpha = initial_step;
        let accepted = loop {
            let mut cand = &w - &grad * alpha;
            project_in_place(cand.as_mut_slice());
            let delta = &cand - &w;
            let (cy, cr, cf) = eval(&cand);
            if cf.is_finite() && cf <= f + cfg.armijo_c * grad.dot(&delta) {
                break Some((cand, cy, cr, cf));
            }
            alpha *= cfg.shrink;
            if alpha < cfg.min_step {
                break None;
            }
        };
        let Some((cand, cy, cr, cf)) = accepted else {
            termination = Termination::StepUnderflow;
            iterations -= 1;
            break;
        };
        let change = (&cand - &w).amax();
        w = cand;
        y = cy;
        r = cr;
        f = cf;
        step = alpha;
        trace.push(2.0 * f);
        if change < cfg.refine_tol {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(RefineResult {
        weights: SimplexWeights::new(w)?,
        iterations,
        termination,
        step,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsoCorrection {
    pub weights: SimplexWeights,
    /// Ratios `|log_p(z_j)| / L(gamma_{p, z_j})`.
    pub scales: Vec<f64>,
    /// Set when every `c_j w_j` vanished and the input was returned unchanged.
    pub degenerate: bool,
}

/// Reweights `w` so the iso-logarithms at `p` balance: `w~_j ∝ c_j w_j`.
pub fn iso_correct(
    phi: &dyn Diffeo,
    archetypes: &ArchetypeSet,
    p: &Vector,
    weights: &SimplexWeights,
    m: usize,
) -> Result<IsoCorrection> {
    check_dim(archetypes.dim(), p.len())?;
    check_dim(archetypes.len(), weights.len())?;
    let mut scales = Vec::with_capacity(archetypes.len());
    for j in 0..archetypes.len() {
        // Archetypes with zero weight do not enter the correction.
        let c = if weights.as_slice()[j] == 0.0 {
            1.0
        } else {
            iso_log_scale(phi, p, &archetypes.archetype(j), m)?
        };
        scales.push(c);
    }
    // Scales that agree to rounding leave the weights untouched.
    let top = scales.iter().copied().fold(0.0f64, f64::max);
    if scales.iter().all(|c| (c / top - 1.0).abs() <= 1e-12) {
        return Ok(IsoCorrection {
            weights: weights.clone(),
            scales,
            degenerate: false,
        });
    }
    let scaled: Vec<f64> = scales
        .iter()
        .zip(weights.as_slice())
        .map(|(c, w)| c * w)
        .collect();
    let total: f64 = scaled.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Ok(IsoCorrection {
            weights: weights.clone(),
            scales,
            degenerate: true,
        });
    }
    Ok(IsoCorrection {
        weights: SimplexWeights::new(DVector::from_iterator(
            scaled.len(),
            scaled.iter().map(|v| v / total),
        ))?,
        scales,
        degenerate: false,
    })
}

/// `(|sum_j w_j iso_log_p(z_j)|, max_j |iso_log_p(z_j)|)`, the maximum taken over all archetypes.
pub fn iso_residual(
    phi: &dyn Diffeo,
    archetypes: &ArchetypeSet,
    p: &Vector,
    weights: &SimplexWeights,
    m: usize,
) -> Result<(f64, f64)> {
    check_dim(archetypes.len(), weights.len())?;
    let mut sum = Vector::zeros(archetypes.dim());
    let mut largest = 0.0f64;
    for (j, &w) in weights.as_slice().iter().enumerate() {
        let z = archetypes.archetype(j);
        let v = if &z == p {
            Vector::zeros(p.len())
        } else {
            iso_log(phi, p, &z, m)?
        };
        largest = largest.max(v.norm());
        if w != 0.0 {
            sum += v * w;
        }
    }
    Ok((sum.norm(), largest))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMasses {
    /// Total weight per class id `0..=max label`.
    pub masses: Vec<f64>,
    /// Class with the largest mass; ties go to the lowest id.
    pub class: usize,
}

pub fn classify_aggregate(weights: &SimplexWeights, labels: &[usize]) -> Result<ClassMasses> {
    check_dim(weights.len(), labels.len())?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut masses = vec![0.0; classes];
    for (&w, &l) in weights.as_slice().iter().zip(labels) {
        masses[l] += w;
    }
    let class = argmax_lowest(&masses);
    Ok(ClassMasses { masses, class })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RamResult {
    pub weights: SimplexWeights,
    pub iso_weights: SimplexWeights,
    /// `RAM(x) = phi^{-1}(phi(Z) w)`.
    pub point: Vector,
    pub relaxed_weights: SimplexWeights,
    pub relaxed_point: Vector,
    pub relaxed_iterations: usize,
    pub relaxed_converged: bool,
    pub refine_iterations: usize,
    pub termination: Termination,
    pub step: f64,
    /// `|RAM(x) - x|_2`.
    pub error: f64,
    /// `|phi^{-1}(phi(Z) w_relaxed) - x|_2`.
    pub relaxed_error: f64,
    pub iso_degenerate: bool,
    pub objective_trace: Vec<f64>,
}

impl RamResult {
    pub fn converged(&self) -> bool {
        self.relaxed_converged && self.termination == Termination::Converged
    }
}

/// Relaxed solve, refinement from the better of the relaxed and uniform weights, iso weights.
pub fn ram_full(
    phi: &dyn Diffeo,
    archetypes: &ArchetypeSet,
    x: &Vector,
    cfg: &RamConfig,
) -> Result<RamResult> {
    let relaxed = relaxed_ram(phi, archetypes, x, cfg.relaxed_tol, cfg.relaxed_max_iter)?;
    let uniform = SimplexWeights::uniform(archetypes.len());
    let relaxed_obj = ram_objective(phi, archetypes, x, relaxed.weights.as_vector());
    let uniform_obj = ram_objective(phi, archetypes, x, uniform.as_vector());
    let init = if uniform_obj < relaxed_obj {
        &uniform
    } else {
        &relaxed.weights
    };
    let refined = ram_refine(phi, archetypes, x, init, cfg)?;
    let point = archetypes.combine(phi, refined.weights.as_vector());
    let relaxed_point = archetypes.combine(phi, relaxed.weights.as_vector());
    let iso = iso_correct(phi, archetypes, &point, &refined.weights, cfg.arc_knots)?;
    Ok(RamResult {
        error: (&point - x).norm(),
        relaxed_error: (&relaxed_point - x).norm(),
        weights: refined.weights,
        iso_weights: iso.weights,
        point,
        relaxed_weights: relaxed.weights,
        relaxed_point,
        relaxed_iterations: relaxed.iterations,
        relaxed_converged: relaxed.converged,
        refine_iterations: refined.iterations,
        termination: refined.termination,
        step: refined.step,
        iso_degenerate: iso.degenerate,
        objective_trace: refined.objective_trace,
    })
}

/// Solves every row of `xs` independently; results keep the input order.
pub fn ram_batch(
    phi: &dyn Diffeo,
    archetypes: &ArchetypeSet,
    xs: &DMatrix<f64>,
    cfg: &RamConfig,
) -> Vec<Result<RamResult>> {
    (0..xs.nrows())
        .into_par_iter()
        .map(|i| ram_full(phi, archetypes, &xs.row(i).transpose(), cfg))
        .collect()
}

/// Relaxed weights for every row of `xs`, in input order.
pub fn relaxed_batch(
    phi: &dyn Diffeo,
    archetypes: &ArchetypeSet,
    xs: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Vec<Result<RelaxedResult>> {
    (0..xs.nrows())
        .into_par_iter()
        .map(|i| relaxed_ram(phi, archetypes, &xs.row(i).transpose(), tol, max_iter))
        .collect()
}

/// Projects an arbitrary vector of weights, for callers holding raw coefficients.
pub fn to_simplex(v: &DVector<f64>) -> Result<SimplexWeights> {
    project_simplex(v)
}
