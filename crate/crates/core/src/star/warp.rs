use serde::{Deserialize, Serialize};

use crate::diffeo::{Diffeo, LogDet, Vector};

/// Strictly increasing concave reparametrization of the norm with `nu(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warp {
    Identity,
    /// `nu(s) = ln(a s + 1)`.
    Log { a: f64 },
}

impl Default for Warp {
    fn default() -> Self {
        Warp::Log { a: 10.0 }
    }
}

impl Warp {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            Warp::Identity => s,
            Warp::Log { a } => (a * s).ln_1p(),
        }
    }

    pub fn inverse(&self, t: f64) -> f64 {
        match *self {
            Warp::Identity => t,
            Warp::Log { a } => t.exp_m1() / a,
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            Warp::Identity => 1.0,
            Warp::Log { a } => a / (a * s + 1.0),
        }
    }

    /// `nu(s) / s`, continuously extended by `nu'(0)` at `s = 0`.
    pub fn ratio(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.derivative(0.0);
        }
        self.value(s) / s
    }

    /// `nu^{-1}(t) / t`, continuously extended by `1 / nu'(0)` at `t = 0`.
    pub fn inverse_ratio(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 1.0 / self.derivative(0.0);
        }
        self.inverse(t) / t
    }

    pub fn validate(&self) -> crate::Result<()> {
        match *self {
            Warp::Identity => Ok(()),
            Warp::Log { a } if a > 0.0 && a.is_finite() => Ok(()),
            Warp::Log { a } => Err(crate::Error::invalid(format!(
                "warp parameter must be positive, got {a}"
            ))),
        }
    }
}

/// `x -> nu(|x|) x / |x|`.
#[derive(Debug, Clone, Copy)]
pub struct RadialWarp {
    dim: usize,
    warp: Warp,
}

impl RadialWarp {
    pub fn new(dim: usize, warp: Warp) -> Self {
        warp.validate().expect("invalid warp");
        Self { dim, warp }
    }

    pub fn warp(&self) -> Warp {
        self.warp
    }

    /// Symmetric Jacobian `d(s) P_s + q (I - P_s)` applied to `v`.
    fn apply(x: &Vector, v: &Vector, radial: f64, tangential: f64) -> Vector {
        let r = x.norm();
        if r == 0.0 {
            return v * radial;
        }
        let s = x / r;
        let along = s.dot(v);
        let normal = &s * along;
        &normal * radial + (v - normal) * tangential
    }
}

impl Diffeo for RadialWarp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: &Vector) -> Vector {
        x * self.warp.ratio(x.norm())
    }

    fn inverse(&self, y: &Vector) -> Vector {
        y * self.warp.inverse_ratio(y.norm())
    }

    fn jvp(&self, x: &Vector, v: &Vector) -> Vector {
        let r = x.norm();
        Self::apply(x, v, self.warp.derivative(r), self.warp.ratio(r))
    }

    fn inverse_jvp(&self, y: &Vector, w: &Vector) -> Vector {
        let t = y.norm();
        let r = self.warp.inverse(t);
        Self::apply(y, w, 1.0 / self.warp.derivative(r), self.warp.inverse_ratio(t))
    }

    fn inverse_vjp(&self, y: &Vector, w: &Vector) -> Vector {
        self.inverse_jvp(y, w)
    }

    fn log_det(&self, x: &Vector) -> Option<LogDet> {
        let r = x.norm();
        let value = self.warp.derivative(r).ln() + (self.dim as f64 - 1.0) * self.warp.ratio(r).ln();
        Some(match self.warp {
            Warp::Identity => LogDet::constant(0.0),
            Warp::Log { .. } => LogDet::varying(value),
        })
    }
}
