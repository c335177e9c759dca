//! Invertible smooth maps `R^d -> R^d` and their differentials.
//!
//! Every pullback construction in this crate is phrased in terms of the
//! [`Diffeo`] trait: forward and inverse evaluation, the differential of the
//! forward map, and the differential of the inverse map together with its
//! transpose. Implementations that cannot supply analytic differentials fall
//! back to central finite differences.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;

/// Log-absolute-determinant of the Jacobian at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub value: f64,
    /// True when the value is the same for every input.
    pub constant: bool,
}

impl LogDet {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            constant: true,
        }
    }

    pub fn varying(value: f64) -> Self {
        Self {
            value,
            constant: false,
        }
    }
}

/// A global diffeomorphism of `R^d`.
pub trait Diffeo: Send + Sync {
    fn dim(&self) -> usize;

    fn forward(&self, x: &Vector) -> Vector;

    fn inverse(&self, y: &Vector) -> Vector;

    /// `D_x phi [v]`.
    fn jvp(&self, x: &Vector, v: &Vector) -> Vector {
        fd_directional(|p| self.forward(p), x, v)
    }

    /// `D_y phi^{-1} [w]`.
    fn inverse_jvp(&self, y: &Vector, w: &Vector) -> Vector {
        fd_directional(|p| self.inverse(p), y, w)
    }

    /// `(D_y phi^{-1})^T w`.
    fn inverse_vjp(&self, y: &Vector, w: &Vector) -> Vector {
        let jac = jacobian_from_jvp(self.dim(), |e| self.inverse_jvp(y, e));
        jac.tr_mul(w)
    }

    /// `log |det D_x phi|`, when known in closed form.
    fn log_det(&self, _x: &Vector) -> Option<LogDet> {
        None
    }
}

impl<D: Diffeo + ?Sized> Diffeo for Arc<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn forward(&self, x: &Vector) -> Vector {
        (**self).forward(x)
    }
    fn inverse(&self, y: &Vector) -> Vector {
        (**self).inverse(y)
    }
    fn jvp(&self, x: &Vector, v: &Vector) -> Vector {
        (**self).jvp(x, v)
    }
    fn inverse_jvp(&self, y: &Vector, w: &Vector) -> Vector {
        (**self).inverse_jvp(y, w)
    }
    fn inverse_vjp(&self, y: &Vector, w: &Vector) -> Vector {
        (**self).inverse_vjp(y, w)
    }
    fn log_det(&self, x: &Vector) -> Option<LogDet> {
        (**self).log_det(x)
    }
}

/// Central-difference directional derivative of `f` at `x` along `v`.
///
/// The step is `1e-5 * (1 + |x|_inf)` along the unit direction of `v`; the
/// result is rescaled by `|v|_2` so the output stays linear in `v`.
pub fn fd_directional<F>(f: F, x: &Vector, v: &Vector) -> Vector
where
    F: Fn(&Vector) -> Vector,
{
    let norm = v.norm();
    if norm == 0.0 {
        return Vector::zeros(x.len());
    }
    let h = 1e-5 * (1.0 + x.amax());
    let u = v / norm;
    let plus = f(&(x + &u * h));
    let minus = f(&(x - &u * h));
    (plus - minus) * (norm / (2.0 * h))
}

/// Dense Jacobian assembled column by column from a linear map.
pub fn jacobian_from_jvp<F>(dim: usize, jvp: F) -> DMatrix<f64>
where
    F: Fn(&Vector) -> Vector,
{
    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = Vector::zeros(dim);
        e[j] = 1.0;
        jac.set_column(j, &jvp(&e));
    }
    jac
}

#[derive(Debug, Clone, Copy)]
pub struct Identity {
    dim: usize,
}

impl Identity {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Diffeo for Identity {
    fn dim(&self) -> usize {
        self.dim
    }
    fn forward(&self, x: &Vector) -> Vector {
        x.clone()
    }
    fn inverse(&self, y: &Vector) -> Vector {
        y.clone()
    }
    fn jvp(&self, _x: &Vector, v: &Vector) -> Vector {
        v.clone()
    }
    fn inverse_jvp(&self, _y: &Vector, w: &Vector) -> Vector {
        w.clone()
    }
    fn inverse_vjp(&self, _y: &Vector, w: &Vector) -> Vector {
        w.clone()
    }
    fn log_det(&self, _x: &Vector) -> Option<LogDet> {
        Some(LogDet::constant(0.0))
    }
}

/// `x -> r x` for a fixed `r > 0`.
#[derive(Debug, Clone, Copy)]
pub struct UniformScale {
    dim: usize,
    factor: f64,
}

impl UniformScale {
    pub fn new(dim: usize, factor: f64) -> Self {
        assert!(factor > 0.0, "scale factor must be positive");
        Self { dim, factor }
    }
}

impl Diffeo for UniformScale {
    fn dim(&self) -> usize {
        self.dim
    }
    fn forward(&self, x: &Vector) -> Vector {
        x * self.factor
    }
    fn inverse(&self, y: &Vector) -> Vector {
        y / self.factor
    }
    fn jvp(&self, _x: &Vector, v: &Vector) -> Vector {
        v * self.factor
    }
    fn inverse_jvp(&self, _y: &Vector, w: &Vector) -> Vector {
        w / self.factor
    }
    fn inverse_vjp(&self, _y: &Vector, w: &Vector) -> Vector {
        w / self.factor
    }
    fn log_det(&self, _x: &Vector) -> Option<LogDet> {
        Some(LogDet::constant(self.dim as f64 * self.factor.ln()))
    }
}

/// `phi = maps[n-1] ∘ ... ∘ maps[0]`; the first element is applied first.
#[derive(Clone)]
pub struct Compose {
    maps: Vec<Arc<dyn Diffeo>>,
    dim: usize,
}

impl Compose {
    /// Panics if the list is empty or the dimensions disagree.
    pub fn new(maps: Vec<Arc<dyn Diffeo>>) -> Self {
        assert!(!maps.is_empty(), "composition needs at least one map");
        let dim = maps[0].dim();
        assert!(
            maps.iter().all(|m| m.dim() == dim),
            "composed maps must share a dimension"
        );
        Self { maps, dim }
    }

    pub fn maps(&self) -> &[Arc<dyn Diffeo>] {
        &self.maps
    }

    /// Points `u_k` visited by the inverse pass, `u_n = y`, `u_{k-1} = phi_k^{-1}(u_k)`,
    /// returned in application order of the inverse (outermost map first).
    fn inverse_trace(&self, y: &Vector) -> Vec<Vector> {
        let mut points = Vec::with_capacity(self.maps.len());
        let mut u = y.clone();
        for map in self.maps.iter().rev() {
            let next = map.inverse(&u);
            points.push(u);
            u = next;
        }
        points
    }
}

impl Diffeo for Compose {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: &Vector) -> Vector {
        self.maps.iter().fold(x.clone(), |p, m| m.forward(&p))
    }

    fn inverse(&self, y: &Vector) -> Vector {
        self.maps.iter().rev().fold(y.clone(), |p, m| m.inverse(&p))
    }

    fn jvp(&self, x: &Vector, v: &Vector) -> Vector {
        let mut p = x.clone();
        let mut t = v.clone();
        for map in &self.maps {
            t = map.jvp(&p, &t);
            p = map.forward(&p);
        }
        t
    }

    fn inverse_jvp(&self, y: &Vector, w: &Vector) -> Vector {
        let mut p = y.clone();
        let mut t = w.clone();
        for map in self.maps.iter().rev() {
            t = map.inverse_jvp(&p, &t);
            p = map.inverse(&p);
        }
        t
    }

    fn inverse_vjp(&self, y: &Vector, w: &Vector) -> Vector {
        // (D phi^{-1})^T = (D phi_n^{-1})^T ... (D phi_1^{-1})^T, so the
        // innermost inverse (visited last) is transposed first.
        let trace = self.inverse_trace(y);
        let mut t = w.clone();
        for (map, u) in self.maps.iter().zip(trace.iter().rev()) {
            t = map.inverse_vjp(u, &t);
        }
        t
    }

    fn log_det(&self, x: &Vector) -> Option<LogDet> {
        let mut p = x.clone();
        let mut total = 0.0;
        let mut constant = true;
        for map in &self.maps {
            let ld = map.log_det(&p)?;
            total += ld.value;
            constant &= ld.constant;
            p = map.forward(&p);
        }
        Some(LogDet {
            value: total,
            constant,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Coordinate-wise cubing; relies on the finite-difference defaults.
    struct Cube;

    impl Diffeo for Cube {
        fn dim(&self) -> usize {
            2
        }
        fn forward(&self, x: &Vector) -> Vector {
            x.map(|v| v * v * v)
        }
        fn inverse(&self, y: &Vector) -> Vector {
            y.map(f64::cbrt)
        }
    }

    #[test]
    fn fd_fallback_matches_analytic_derivative() {
        let x = Vector::from_vec(vec![0.7, -1.3]);
        let v = Vector::from_vec(vec![0.2, 0.5]);
        let got = Cube.jvp(&x, &v);
        let want = Vector::from_vec(vec![3.0 * 0.49 * 0.2, 3.0 * 1.69 * 0.5]);
        assert!((got - &want).norm() <= 1e-8 * want.norm());
    }

    #[test]
    fn fd_fallback_is_zero_for_zero_direction() {
        let x = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(Cube.jvp(&x, &Vector::zeros(2)), Vector::zeros(2));
    }

    #[test]
    fn compose_of_scalings_multiplies_factors() {
        let c = Compose::new(vec![
            Arc::new(UniformScale::new(3, 2.0)),
            Arc::new(UniformScale::new(3, 0.25)),
        ]);
        let x = Vector::from_vec(vec![1.0, -2.0, 4.0]);
        assert_eq!(c.forward(&x), &x * 0.5);
        assert_eq!(c.inverse(&x), &x * 2.0);
        let ld = c.log_det(&x).unwrap();
        assert!(ld.constant);
        assert!((ld.value - 3.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn compose_vjp_is_transpose_of_jvp() {
        let c = Compose::new(vec![
            Arc::new(UniformScale::new(2, 3.0)),
            Arc::new(Cube) as Arc<dyn Diffeo>,
        ]);
        let y = Vector::from_vec(vec![0.4, 2.0]);
        let a = Vector::from_vec(vec![1.0, -0.5]);
        let b = Vector::from_vec(vec![0.3, 0.9]);
        let lhs = b.dot(&c.inverse_jvp(&y, &a));
        let rhs = a.dot(&c.inverse_vjp(&y, &b));
        assert!((lhs - rhs).abs() < 1e-8);
    }

    #[test]
    #[should_panic]
    fn compose_rejects_mixed_dimensions() {
        Compose::new(vec![Arc::new(Identity::new(2)), Arc::new(Identity::new(3))]);
    }
}
