use crate::diffeo::Vector;

/// A positive function on the unit sphere `S^{d-1}`.
pub trait RadialFn: Send + Sync {
    fn dim(&self) -> usize;

    /// Value at a unit vector `s`.
    fn eval(&self, s: &Vector) -> f64;

    /// Gradient at `s` of the degree-0 extension `x -> rho(x / |x|)`; tangent to the sphere.
    fn grad(&self, s: &Vector) -> Vector;

    /// `(rho_min, rho_max)` with `0 < rho_min <= rho(s) <= rho_max` for every unit `s`.
    fn bounds(&self) -> (f64, f64);
}

/// `rho(s) = c` for every direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRadial {
    dim: usize,
    value: f64,
}

impl ConstantRadial {
    pub fn new(dim: usize, value: f64) -> Self {
        assert!(value > 0.0 && value.is_finite(), "radial value must be positive");
        Self { dim, value }
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

impl RadialFn for ConstantRadial {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _s: &Vector) -> f64 {
        self.value
    }
    fn grad(&self, _s: &Vector) -> Vector {
        Vector::zeros(self.dim)
    }
    fn bounds(&self) -> (f64, f64) {
        (self.value, self.value)
    }
}
