use std::sync::Arc;

use super::radial::RadialFn;
use crate::diffeo::{jacobian_from_jvp, Diffeo, LogDet, Vector};

/// `x -> x / rho(x / |x|)`, sending the star body boundary to the unit sphere.
#[derive(Clone)]
pub struct RadialScaling {
    rho: Arc<dyn RadialFn>,
}

impl RadialScaling {
    pub fn new(rho: Arc<dyn RadialFn>) -> Self {
        Self { rho }
    }

    pub fn radial(&self) -> &Arc<dyn RadialFn> {
        &self.rho
    }

    fn direction(x: &Vector) -> Option<(Vector, f64)> {
        let r = x.norm();
        (r > 0.0).then(|| (x / r, r))
    }
}

impl Diffeo for RadialScaling {
    fn dim(&self) -> usize {
        self.rho.dim()
    }

    fn forward(&self, x: &Vector) -> Vector {
        match Self::direction(x) {
            Some((s, _)) => x / self.rho.eval(&s),
            None => x.clone(),
        }
    }

    fn inverse(&self, y: &Vector) -> Vector {
        match Self::direction(y) {
            Some((s, _)) => y * self.rho.eval(&s),
            None => y.clone(),
        }
    }

    fn jvp(&self, x: &Vector, v: &Vector) -> Vector {
        match Self::direction(x) {
            Some((s, _)) => {
                let rho = self.rho.eval(&s);
                let g = self.rho.grad(&s);
                v / rho - s * (g.dot(v) / (rho * rho))
            }
            // One-sided limit along v at the origin.
            None => match Self::direction(v) {
                Some((u, _)) => v / self.rho.eval(&u),
                None => v.clone(),
            },
        }
    }

    fn inverse_jvp(&self, y: &Vector, w: &Vector) -> Vector {
        match Self::direction(y) {
            Some((s, _)) => {
                let rho = self.rho.eval(&s);
                let g = self.rho.grad(&s);
                w * rho + s * g.dot(w)
            }
            None => match Self::direction(w) {
                Some((u, _)) => w * self.rho.eval(&u),
                None => w.clone(),
            },
        }
    }

    fn inverse_vjp(&self, y: &Vector, w: &Vector) -> Vector {
        match Self::direction(y) {
            Some((s, _)) => {
                let rho = self.rho.eval(&s);
                let g = self.rho.grad(&s);
                w * rho + g * s.dot(w)
            }
            None => jacobian_from_jvp(self.dim(), |e| self.inverse_jvp(y, e)).tr_mul(w),
        }
    }

    fn log_det(&self, x: &Vector) -> Option<LogDet> {
        // det(I / rho - s g^T / rho^2) = rho^{-d} because g is tangent to s.
        let (s, _) = Self::direction(x)?;
        Some(LogDet::varying(-(self.dim() as f64) * self.rho.eval(&s).ln()))
    }
}
