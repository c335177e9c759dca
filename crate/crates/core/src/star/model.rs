use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::radial::RadialFn;
use super::scaling::RadialScaling;
use super::warp::{RadialWarp, Warp};
use crate::diffeo::{Compose, Diffeo, Vector};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{ln_gamma_half, ln_sphere_area};

pub const DEFAULT_QUADRATURE_POINTS: usize = 4096;
pub const DEFAULT_MC_SAMPLES: usize = 1 << 16;
/// Largest dimension for which a normalizer is computed without an override.
pub const MAX_NORMALIZED_DIM: usize = 8;
const MC_SEED: u64 = 0x5eed_57a2;

/// How `Z = int_{S^{d-1}} rho(s)^d dsigma(s)` is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalizerMethod {
    /// Periodic trapezoid rule over the angle; `d = 2` only.
    Quadrature { points: usize },
    /// Uniform directions on the sphere.
    MonteCarlo { samples: usize, seed: u64 },
}

impl NormalizerMethod {
    /// Quadrature in `d = 2`, Monte Carlo up to `d = 8`, refused beyond unless `allow_high_dim`.
    pub fn default_for(dim: usize, allow_high_dim: bool) -> Result<Self> {
        match dim {
            0 | 1 => Err(Error::invalid(format!("normalizer needs d >= 2, got {dim}"))),
            2 => Ok(NormalizerMethod::Quadrature {
                points: DEFAULT_QUADRATURE_POINTS,
            }),
            d if d <= MAX_NORMALIZED_DIM || allow_high_dim => Ok(NormalizerMethod::MonteCarlo {
                samples: DEFAULT_MC_SAMPLES,
                seed: MC_SEED,
            }),
            d => Err(Error::NormalizerUnavailable(format!(
                "Monte Carlo estimate of the angular integral is unreliable in d = {d} > {MAX_NORMALIZED_DIM}"
            ))),
        }
    }
}

/// Estimate of `int_{S^{d-1}} rho(s)^d dsigma(s)`.
pub fn star_normalizer(rho: &dyn RadialFn, method: NormalizerMethod) -> Result<f64> {
    let d = rho.dim();
    if d < 2 {
        return Err(Error::invalid(format!("normalizer needs d >= 2, got {d}")));
    }
    match method {
        NormalizerMethod::Quadrature { points } => {
            if d != 2 {
                return Err(Error::invalid("angular quadrature is implemented for d = 2 only"));
            }
            if points == 0 {
                return Err(Error::invalid("quadrature needs at least one point"));
            }
            let h = 2.0 * PI / points as f64;
            let sum: f64 = (0..points)
                .map(|k| {
                    let th = k as f64 * h;
                    rho.eval(&Vector::from_vec(vec![th.cos(), th.sin()])).powi(2)
                })
                .sum();
            Ok(sum * h)
        }
        NormalizerMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::invalid("Monte Carlo needs at least one sample"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sum = 0.0;
            for _ in 0..samples {
                let s = uniform_direction(&mut rng, d);
                sum += rho.eval(&s).powi(d as i32);
            }
            Ok(ln_sphere_area(d).exp() * sum / samples as f64)
        }
    }
}

fn uniform_direction<R: Rng>(rng: &mut R, d: usize) -> Vector {
    loop {
        let g = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-300 {
            return g / n;
        }
    }
}

/// A deformed star distribution: base flow, radial function and geometric warp.
///
/// The density depends on the base flow and the radial function only; the warp
/// enters the composite diffeomorphism used for geometry.
#[derive(Clone)]
pub struct StarModel {
    phi_a: Arc<dyn Diffeo>,
    rho: Arc<dyn RadialFn>,
    warp: Warp,
    base_log_det: f64,
    log_normalizer: Option<f64>,
}

impl StarModel {
    /// `phi_a` must report a constant log-determinant.
    pub fn new(phi_a: Arc<dyn Diffeo>, rho: Arc<dyn RadialFn>, warp: Warp) -> Result<Self> {
        check_dim(phi_a.dim(), rho.dim())?;
        warp.validate()?;
        let (lo, hi) = rho.bounds();
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid(format!("invalid radial bounds ({lo}, {hi})")));
        }
        let base_log_det = match phi_a.log_det(&Vector::zeros(phi_a.dim())) {
            Some(ld) if ld.constant => ld.value,
            _ => {
                return Err(Error::invalid(
                    "base flow must have a constant log-determinant",
                ))
            }
        };
        Ok(Self {
            phi_a,
            rho,
            warp,
            base_log_det,
            log_normalizer: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.phi_a.dim()
    }

    pub fn base(&self) -> &Arc<dyn Diffeo> {
        &self.phi_a
    }

    pub fn radial(&self) -> &Arc<dyn RadialFn> {
        &self.rho
    }

    pub fn warp(&self) -> Warp {
        self.warp
    }

    pub fn log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }

    /// Attaches a precomputed `ln Z`.
    pub fn with_log_normalizer(mut self, log_z: f64) -> Self {
        self.log_normalizer = Some(log_z);
        self
    }

    /// Computes and caches `ln Z` with the default policy for this dimension.
    pub fn normalize(self, allow_high_dim: bool) -> Result<Self> {
        let method = NormalizerMethod::default_for(self.dim(), allow_high_dim)?;
        self.normalize_with(method)
    }

    pub fn normalize_with(self, method: NormalizerMethod) -> Result<Self> {
        let z = star_normalizer(self.rho.as_ref(), method)?;
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::NonFinite(format!("normalizer estimate {z}")));
        }
        Ok(self.with_log_normalizer(z.ln()))
    }

    /// `nu ∘ S_rho ∘ phi_a`.
    pub fn composite(&self) -> Compose {
        let d = self.dim();
        Compose::new(vec![
            self.phi_a.clone(),
            Arc::new(RadialScaling::new(self.rho.clone())),
            Arc::new(RadialWarp::new(d, self.warp)),
        ])
    }

    /// Log-density without the `-ln Z` term.
    pub fn unnormalized_log_density(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let z = self.phi_a.forward(x);
        let r = z.norm();
        let quad = if r == 0.0 {
            0.0
        } else {
            let rho = self.rho.eval(&(&z / r));
            -0.5 * (r / rho).powi(2)
        };
        let d = self.dim() as f64;
        let radial_const = (0.5 * d - 1.0) * LN_2 + ln_gamma_half(self.dim());
        Ok(quad + self.base_log_det - radial_const)
    }

    pub fn log_density(&self, x: &Vector) -> Result<f64> {
        let log_z = self.log_normalizer.ok_or_else(|| {
            Error::NormalizerUnavailable("model has no normalizer; call normalize first".into())
        })?;
        Ok(self.unnormalized_log_density(x)? - log_z)
    }

    /// `n` independent draws as the rows of an `n x d` matrix.
    ///
    /// Directions are drawn by rejection with acceptance `(rho(s) / rho_max)^d`
    /// and radii as `rho(s)` times a chi variable with `d` degrees of freedom.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let (_, rho_max) = self.rho.bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, d);
        let mut attempts: u64 = 0;
        let mut accepted: u64 = 0;
        while (accepted as usize) < n {
            attempts += 1;
            let s = uniform_direction(&mut rng, d);
            let rho = self.rho.eval(&s);
            let accept = (rho / rho_max).powi(d as i32);
            if rng.random::<f64>() >= accept {
                if attempts > 10_000 && (accepted as f64) < 1e-4 * attempts as f64 {
                    return Err(Error::Sampling(format!(
                        "rejection acceptance {accepted}/{attempts} below 1e-4; rho_max = {rho_max} is too loose"
                    )));
                }
                continue;
            }
            let chi = (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal).powi(2))
                .sum::<f64>()
                .sqrt();
            let x = self.phi_a.inverse(&(s * (rho * chi)));
            out.set_row(accepted as usize, &x.transpose());
            accepted += 1;
        }
        Ok(out)
    }
}
