#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use starflow::ellipsoid::{BranchRadial, Ellipsoid, StarRadial};
use starflow::flow::{CouplingFlow, FlowConfig};
use starflow::star::{StarModel, Warp};
use starflow::{Diffeo, Vector};

/// Coupling flow with its conditioners moved well away from zero.
pub fn perturbed_flow(d: usize, seed: u64) -> CouplingFlow {
    let cfg = FlowConfig {
        blocks: 2,
        hidden: 8,
        random_mix: true,
        seed,
    };
    let mut flow = CouplingFlow::new(d, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let params: Vec<f64> = flow
        .params()
        .iter()
        .map(|p| p + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    flow.set_params(&params).unwrap();
    flow
}

/// Radial function of the ellipsoid `E` itself: both branch ellipsoids equal `E`.
pub fn ellipsoid_radial(e: Ellipsoid) -> BranchRadial {
    BranchRadial::new(e.clone(), e, 0.1).unwrap()
}

/// Two lobes in every dimension: an off-centered ball along `e_0` and a centered ellipsoid.
pub fn lobed_radial(d: usize) -> StarRadial {
    let mut c = Vector::zeros(d);
    c[0] = 0.6;
    let off = Ellipsoid::ball(c, 1.0).unwrap();
    let eig = DVector::from_fn(d, |i, _| 1.0 + 0.5 * i as f64);
    let centered = Ellipsoid::new(DMatrix::identity(d, d), eig, Vector::zeros(d)).unwrap();
    let a = BranchRadial::new(off.clone(), centered, 0.1).unwrap();
    let b = ellipsoid_radial(off.scaled(0.5).unwrap());
    StarRadial::new(vec![a, b], 0.1).unwrap()
}

/// Flow, lobed radial function and log warp; not normalized.
pub fn lobed_model(d: usize, seed: u64) -> StarModel {
    StarModel::new(
        Arc::new(perturbed_flow(d, seed)),
        Arc::new(lobed_radial(d)),
        Warp::default(),
    )
    .unwrap()
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vector {
    Vector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> Vector {
    loop {
        let v = gaussian_vector(rng, d, 1.0);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// `x_i -> x_i^3`, inverse by real cube roots; no analytic differentials.
pub struct Cubing(pub usize);

impl Diffeo for Cubing {
    fn dim(&self) -> usize {
        self.0
    }
    fn forward(&self, x: &Vector) -> Vector {
        x.map(|v| v * v * v)
    }
    fn inverse(&self, y: &Vector) -> Vector {
        y.map(f64::cbrt)
    }
}

pub fn relative_error(got: &Vector, want: &Vector) -> f64 {
    (got - want).norm() / want.norm().max(1e-12)
}
