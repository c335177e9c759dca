//! Manifold maps of the Euclidean pullback structure induced by a [`Diffeo`].
//!
//! All maps are closed form: points are sent through `phi`, combined with
//! ordinary vector arithmetic, and pulled back through `phi^{-1}`. The
//! iso-geodesic reparametrizes a pullback geodesic to constant `l2` speed using
//! a polygonal approximation of its arc length.

use crate::diffeo::{Diffeo, Vector};
use crate::error::{check_dim, Error, Result};

/// Default number of knots for arc-length quadrature.
pub const DEFAULT_ARC_KNOTS: usize = 256;

pub fn distance(phi: &dyn Diffeo, x: &Vector, y: &Vector) -> Result<f64> {
    check_dim(phi.dim(), x.len())?;
    check_dim(phi.dim(), y.len())?;
    Ok((phi.forward(x) - phi.forward(y)).norm())
}

pub fn exp(phi: &dyn Diffeo, x: &Vector, v: &Vector) -> Result<Vector> {
    check_dim(phi.dim(), x.len())?;
    check_dim(phi.dim(), v.len())?;
    Ok(phi.inverse(&(phi.forward(x) + phi.jvp(x, v))))
}

pub fn log(phi: &dyn Diffeo, x: &Vector, y: &Vector) -> Result<Vector> {
    check_dim(phi.dim(), x.len())?;
    check_dim(phi.dim(), y.len())?;
    let fx = phi.forward(x);
    let fy = phi.forward(y);
    Ok(phi.inverse_jvp(&fx, &(fy - &fx)))
}

/// Parallel transport of `v` from `x` to `y` along the connecting geodesic.
pub fn transport(phi: &dyn Diffeo, x: &Vector, y: &Vector, v: &Vector) -> Result<Vector> {
    check_dim(phi.dim(), x.len())?;
    check_dim(phi.dim(), y.len())?;
    check_dim(phi.dim(), v.len())?;
    let pushed = phi.jvp(x, v);
    Ok(phi.inverse_jvp(&phi.forward(y), &pushed))
}

/// Weighted Riemannian barycentre `phi^{-1}(sum_i w_i phi(x_i))`.
///
/// `weights = None` means uniform weights. Explicit weights must lie on the
/// probability simplex (to `1e-9`).
pub fn barycentre(phi: &dyn Diffeo, points: &[Vector], weights: Option<&[f64]>) -> Result<Vector> {
    if points.is_empty() {
        return Err(Error::Empty("barycentre needs at least one point"));
    }
    let n = points.len();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::invalid(format!(
                "{} weights for {} points",
                w.len(),
                n
            )));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("barycentre weights must lie on the simplex"));
        }
    }
    let mut acc = Vector::zeros(phi.dim());
    for (i, p) in points.iter().enumerate() {
        check_dim(phi.dim(), p.len())?;
        let w = weights.map_or(1.0 / n as f64, |w| w[i]);
        if w != 0.0 {
            acc += phi.forward(p) * w;
        }
    }
    Ok(phi.inverse(&acc))
}

/// A parametrized curve on `[0, 1]`.
pub trait Curve {
    fn eval(&self, t: f64) -> Vector;
    fn start(&self) -> &Vector;
    fn end(&self) -> &Vector;

    /// Samples at `m` uniform times `k / (m - 1)`.
    fn sample(&self, m: usize) -> Vec<Vector> {
        uniform_knots(m).into_iter().map(|t| self.eval(t)).collect()
    }
}

fn uniform_knots(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..m).map(|k| k as f64 / (m - 1) as f64).collect(),
    }
}

/// `t -> phi^{-1}((1 - t) phi(x) + t phi(y))`.
pub struct Geodesic<'a> {
    phi: &'a dyn Diffeo,
    x: Vector,
    y: Vector,
    fx: Vector,
    fy: Vector,
}

impl<'a> Geodesic<'a> {
    pub fn new(phi: &'a dyn Diffeo, x: &Vector, y: &Vector) -> Result<Self> {
        check_dim(phi.dim(), x.len())?;
        check_dim(phi.dim(), y.len())?;
        Ok(Self {
            phi,
            fx: phi.forward(x),
            fy: phi.forward(y),
            x: x.clone(),
            y: y.clone(),
        })
    }

    /// Velocity `d/dt gamma(t) = D phi^{-1} [phi(y) - phi(x)]`.
    pub fn velocity(&self, t: f64) -> Vector {
        let p = &self.fx * (1.0 - t) + &self.fy * t;
        self.phi.inverse_jvp(&p, &(&self.fy - &self.fx))
    }
}

impl Curve for Geodesic<'_> {
    fn eval(&self, t: f64) -> Vector {
        // Endpoints are returned verbatim rather than through a round trip.
        if t == 0.0 {
            return self.x.clone();
        }
        if t == 1.0 {
            return self.y.clone();
        }
        self.phi
            .inverse(&(&self.fx * (1.0 - t) + &self.fy * t))
    }
    fn start(&self) -> &Vector {
        &self.x
    }
    fn end(&self) -> &Vector {
        &self.y
    }
}

pub fn geodesic<'a>(phi: &'a dyn Diffeo, x: &Vector, y: &Vector) -> Result<Geodesic<'a>> {
    Geodesic::new(phi, x, y)
}

/// Polygonal arc-length table of a curve on uniform knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseArc {
    knots: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PiecewiseArc {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `L_k = sum_{i<k} |gamma(t_{i+1}) - gamma(t_i)|_2`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().expect("arc has at least two knots")
    }

    /// Inverse of the normalized arc-length function `t -> L(t) / L(1)`,
    /// linear between knots. Returns `s` itself for a zero-length arc.
    pub fn time_at_fraction(&self, s: f64) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return s.clamp(0.0, 1.0);
        }
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let target = s * total;
        // First index with cumulative >= target.
        let k = self.cumulative.partition_point(|&l| l < target).max(1);
        let (l0, l1) = (self.cumulative[k - 1], self.cumulative[k]);
        let (t0, t1) = (self.knots[k - 1], self.knots[k]);
        if l1 <= l0 {
            return t0;
        }
        t0 + (target - l0) / (l1 - l0) * (t1 - t0)
    }
}

pub fn arc_length<C: Curve + ?Sized>(curve: &C, m: usize) -> Result<PiecewiseArc> {
    if m < 2 {
        return Err(Error::invalid(format!("arc length needs m >= 2, got {m}")));
    }
    let knots = uniform_knots(m);
    let mut cumulative = Vec::with_capacity(m);
    cumulative.push(0.0);
    let mut prev = curve.eval(knots[0]);
    for &t in &knots[1..] {
        let p = curve.eval(t);
        let last = *cumulative.last().unwrap();
        cumulative.push(last + (&p - &prev).norm());
        prev = p;
    }
    Ok(PiecewiseArc { knots, cumulative })
}

/// A pullback geodesic traversed at (approximately) constant `l2` speed.
pub struct IsoGeodesic<'a> {
    geodesic: Geodesic<'a>,
    arc: PiecewiseArc,
    degenerate: bool,
}

impl<'a> IsoGeodesic<'a> {
    pub fn arc(&self) -> &PiecewiseArc {
        &self.arc
    }

    /// Time change `tau(t)` mapping iso-time to geodesic time.
    pub fn tau(&self, t: f64) -> f64 {
        if self.degenerate {
            return t;
        }
        self.arc.time_at_fraction(t)
    }

    pub fn length(&self) -> f64 {
        self.arc.total()
    }

    pub fn geodesic(&self) -> &Geodesic<'a> {
        &self.geodesic
    }
}

impl Curve for IsoGeodesic<'_> {
    fn eval(&self, t: f64) -> Vector {
        if self.degenerate {
            return self.geodesic.x.clone();
        }
        self.geodesic.eval(self.tau(t))
    }
    fn start(&self) -> &Vector {
        self.geodesic.start()
    }
    fn end(&self) -> &Vector {
        self.geodesic.end()
    }
}

/// Iso-geodesic with `m` arc-length knots. For `x == y` the curve is constant.
pub fn iso_geodesic<'a>(
    phi: &'a dyn Diffeo,
    x: &Vector,
    y: &Vector,
    m: usize,
) -> Result<IsoGeodesic<'a>> {
    let geodesic = Geodesic::new(phi, x, y)?;
    if x == y {
        return Ok(IsoGeodesic {
            geodesic,
            arc: PiecewiseArc {
                knots: vec![0.0, 1.0],
                cumulative: vec![0.0, 0.0],
            },
            degenerate: true,
        });
    }
    let arc = arc_length(&geodesic, m)?;
    Ok(IsoGeodesic {
        geodesic,
        arc,
        degenerate: false,
    })
}

/// Ratio `|log_x(y)|_2 / L(gamma_{x,y})` between the pullback logarithm and
/// the `l2` arc length of the connecting geodesic. Equals 1 for `x == y`.
pub fn iso_log_scale(phi: &dyn Diffeo, x: &Vector, y: &Vector, m: usize) -> Result<f64> {
    check_dim(phi.dim(), x.len())?;
    check_dim(phi.dim(), y.len())?;
    if x == y {
        return Ok(1.0);
    }
    let log_norm = log(phi, x, y)?.norm();
    let length = arc_length(&Geodesic::new(phi, x, y)?, m)?.total();
    if length <= 0.0 || log_norm <= 0.0 {
        return Ok(1.0);
    }
    Ok(log_norm / length)
}

/// Iso-logarithm: `log_x(y)` rescaled to the `l2` arc length of the geodesic.
pub fn iso_log(phi: &dyn Diffeo, x: &Vector, y: &Vector, m: usize) -> Result<Vector> {
    let scale = iso_log_scale(phi, x, y, m)?;
    Ok(log(phi, x, y)? / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffeo::{Identity, UniformScale};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn identity_distance_is_euclidean() {
        let id = Identity::new(2);
        assert_eq!(distance(&id, &v(&[0.0, 0.0]), &v(&[3.0, 4.0])).unwrap(), 5.0);
        assert_eq!(distance(&id, &v(&[1.0, 1.0]), &v(&[1.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let id = Identity::new(2);
        let err = distance(&id, &v(&[0.0, 0.0]), &v(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn identity_maps_are_vector_arithmetic() {
        let id = Identity::new(2);
        let x = v(&[1.0, 2.0]);
        let y = v(&[-1.0, 0.5]);
        let w = v(&[0.3, -0.2]);
        assert_eq!(exp(&id, &x, &w).unwrap(), &x + &w);
        assert_eq!(log(&id, &x, &y).unwrap(), &y - &x);
        assert_eq!(transport(&id, &x, &y, &w).unwrap(), w);
    }

    #[test]
    fn straight_line_midpoint_under_identity_and_scaling() {
        let x = v(&[1.0, -1.0]);
        let y = v(&[3.0, 5.0]);
        let mid = (&x + &y) / 2.0;
        let id = Identity::new(2);
        let g = geodesic(&id, &x, &y).unwrap();
        assert!((g.eval(0.5) - &mid).norm() < 1e-15);
        let sc = UniformScale::new(2, 7.5);
        let g = geodesic(&sc, &x, &y).unwrap();
        assert!((g.eval(0.5) - &mid).norm() < 1e-14);
        assert_eq!(g.eval(0.0), x);
        assert_eq!(g.eval(1.0), y);
    }

    #[test]
    fn barycentre_cases() {
        let id = Identity::new(2);
        let pts = vec![v(&[0.0, 0.0]), v(&[2.0, 0.0])];
        assert_eq!(barycentre(&id, &pts, None).unwrap(), v(&[1.0, 0.0]));
        assert_eq!(
            barycentre(&id, &pts, Some(&[1.0, 0.0])).unwrap(),
            v(&[0.0, 0.0])
        );
        assert!(matches!(
            barycentre(&id, &[], None),
            Err(Error::Empty(_))
        ));
        assert!(barycentre(&id, &pts, Some(&[0.7, 0.7])).is_err());
    }

    #[test]
    fn straight_line_arc_length_is_exact() {
        let id = Identity::new(2);
        let g = geodesic(&id, &v(&[0.0, 0.0]), &v(&[3.0, 4.0])).unwrap();
        for m in [2, 3, 17, 256] {
            let arc = arc_length(&g, m).unwrap();
            assert!((arc.total() - 5.0).abs() < 1e-12);
        }
        assert!(arc_length(&g, 1).is_err());
    }

    struct QuarterCircle {
        a: Vector,
        b: Vector,
    }

    impl Curve for QuarterCircle {
        fn eval(&self, t: f64) -> Vector {
            let th = t * std::f64::consts::FRAC_PI_2;
            v(&[th.cos(), th.sin()])
        }
        fn start(&self) -> &Vector {
            &self.a
        }
        fn end(&self) -> &Vector {
            &self.b
        }
    }

    #[test]
    fn quarter_circle_length_converges_from_below() {
        let c = QuarterCircle {
            a: v(&[1.0, 0.0]),
            b: v(&[0.0, 1.0]),
        };
        let mut prev = 0.0;
        for m in [2usize, 3, 5, 9, 17, 33, 65] {
            let l = arc_length(&c, m).unwrap().total();
            assert!(l > prev);
            assert!(l < std::f64::consts::FRAC_PI_2);
            prev = l;
        }
        // Analytic length pi/2.
        let l = arc_length(&c, 1025).unwrap().total();
        assert!((l - std::f64::consts::FRAC_PI_2).abs() < 1e-4);
    }

    #[test]
    fn iso_geodesic_identity_matches_geodesic() {
        let id = Identity::new(2);
        let x = v(&[0.0, 1.0]);
        let y = v(&[2.0, -3.0]);
        let g = geodesic(&id, &x, &y).unwrap();
        let iso = iso_geodesic(&id, &x, &y, 64).unwrap();
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            assert!((iso.eval(t) - g.eval(t)).norm() < 1e-12);
        }
    }

    #[test]
    fn degenerate_iso_geodesic_is_constant() {
        let id = Identity::new(2);
        let x = v(&[0.5, 0.5]);
        let iso = iso_geodesic(&id, &x, &x, 64).unwrap();
        assert_eq!(iso.length(), 0.0);
        assert_eq!(iso.eval(0.3), x);
        assert_eq!(iso_log_scale(&id, &x, &x, 64).unwrap(), 1.0);
    }

    #[test]
    fn iso_log_scale_is_one_for_identity_and_scaling() {
        let x = v(&[0.1, 0.2, 0.3]);
        let y = v(&[-1.0, 2.0, 0.0]);
        assert!((iso_log_scale(&Identity::new(3), &x, &y, 64).unwrap() - 1.0).abs() < 1e-12);
        let sc = UniformScale::new(3, 4.0);
        assert!((iso_log_scale(&sc, &x, &y, 64).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn time_at_fraction_inverts_cumulative_length() {
        let arc = PiecewiseArc {
            knots: vec![0.0, 0.5, 1.0],
            cumulative: vec![0.0, 1.0, 4.0],
        };
        assert_eq!(arc.time_at_fraction(0.25), 0.5);
        assert!((arc.time_at_fraction(0.125) - 0.25).abs() < 1e-15);
        assert!((arc.time_at_fraction(0.625) - 0.75).abs() < 1e-15);
        assert_eq!(arc.time_at_fraction(1.0), 1.0);
    }
}
