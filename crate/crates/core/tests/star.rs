mod common;

use std::f64::consts::{E, PI};
use std::sync::Arc;

use common::{ellipsoid_radial, gaussian_vector, lobed_model, lobed_radial, perturbed_flow, unit_vector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starflow::ellipsoid::{check_fit, fit_centered, fit_offcentered, softmax_k, softmin2, Ellipsoid, StarRadial};
use starflow::geometry::{geodesic, Curve};
use starflow::linalg::ln_sphere_area;
use starflow::pipeline::{density_grid, grid_integral, GridSpec};
use starflow::star::{star_normalizer, ConstantRadial, NormalizerMethod, RadialFn, StarModel, Warp};
use starflow::toy::toy_radial;
use starflow::{Diffeo, Identity, Vector};

fn diag_ellipse(a: f64, b: f64) -> Ellipsoid {
    Ellipsoid::new(
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![a, b]),
        Vector::zeros(2),
    )
    .unwrap()
}

fn random_ellipsoid<R: Rng>(rng: &mut R, d: usize) -> Ellipsoid {
    let raw = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
    let frame = raw.qr().q();
    let eig = DVector::from_fn(d, |_, _| 0.2 + 3.0 * rng.random::<f64>());
    // Scale the center so that c^T Q^{-1} c stays below 0.8.
    let probe = Ellipsoid::new(frame.clone(), eig.clone(), Vector::zeros(d)).unwrap();
    let c = gaussian_vector(rng, d, 1.0);
    let c = &c * (0.8 * rng.random::<f64>() / probe.quadratic(&c).sqrt());
    Ellipsoid::new(frame, eig, c).unwrap()
}

/// Tangential finite difference of `s -> rho(s / |s|)`.
fn tangential_fd(rho: &dyn RadialFn, s: &Vector, t: &Vector, h: f64) -> f64 {
    let plus = s + t * h;
    let minus = s - t * h;
    (rho.eval(&(&plus / plus.norm())) - rho.eval(&(&minus / minus.norm()))) / (2.0 * h)
}

fn check_radial(rho: &dyn RadialFn, rng: &mut ChaCha8Rng, trials: usize) {
    let d = rho.dim();
    let (lo, hi) = rho.bounds();
    for _ in 0..trials {
        let s = unit_vector(rng, d);
        let v = rho.eval(&s);
        assert!(lo <= v && v <= hi, "{v} outside [{lo}, {hi}]");
        let g = rho.grad(&s);
        assert!(g.dot(&s).abs() <= 1e-8);
        let t = unit_vector(rng, d);
        let t = &t - &s * s.dot(&t);
        let t = &t / t.norm();
        let fd = tangential_fd(rho, &s, &t, 1e-5);
        let an = g.dot(&t);
        assert!((an - fd).abs() <= 1e-4 * an.abs().max(g.norm()).max(1e-3), "{an} vs {fd}");
    }
}

#[test]
fn radial_functions_are_bounded_tangent_and_differentiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    check_radial(&toy_radial().unwrap(), &mut rng, 1000);
    for d in [2usize, 3, 5] {
        check_radial(&lobed_radial(d), &mut rng, 1000);
        check_radial(&ellipsoid_radial(random_ellipsoid(&mut rng, d)), &mut rng, 200);
    }
}

#[test]
fn ellipsoid_boundary_and_containment() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for d in [2usize, 3, 6] {
        for _ in 0..10 {
            let e = random_ellipsoid(&mut rng, d);
            let bigger = e.scaled(1.3).unwrap();
            for _ in 0..1000 {
                let s = unit_vector(&mut rng, d);
                let t = e.radial(&s);
                assert!(t > 0.0);
                let residual = e.quadratic(&(&s * t - e.center())) - 1.0;
                assert!(residual.abs() <= 1e-8, "residual {residual}");
                assert!(bigger.radial(&s) >= t);
            }
        }
    }
}

#[test]
fn fits_on_gaussian_clouds_meet_their_postconditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for d in [2usize, 3, 5] {
        for shift in [0.0, 0.5, 3.0] {
            let mean = gaussian_vector(&mut rng, d, shift);
            let y = DMatrix::from_fn(200, d, |_, j| mean[j] + rng.sample::<f64, _>(rand_distr::StandardNormal));
            for e in [fit_offcentered(&y, 1.1, 1.0).unwrap(), fit_centered(&y, 1.1, 1.0).unwrap()] {
                assert!(check_fit(&y, &e).unwrap().holds(), "d = {d}, shift = {shift}");
                assert!(e.center_quadratic() < 1.0);
            }
        }
    }
}

#[test]
fn four_branch_maxima_point_along_the_branches() {
    let rho = toy_radial().unwrap();
    let n = 36_000;
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / n as f64;
            rho.eval(&Vector::from_vec(vec![th.cos(), th.sin()]))
        })
        .collect();
    for k in 0..4 {
        let branch = 0.3 + k as f64 * 0.5 * PI;
        // Largest value within a quarter turn of the branch direction.
        let (best, _) = (0..n)
            .filter(|&i| {
                let th = 2.0 * PI * i as f64 / n as f64;
                let gap = (th - branch).rem_euclid(2.0 * PI);
                gap.min(2.0 * PI - gap) < 0.25 * PI
            })
            .map(|i| (i, values[i]))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let th = 2.0 * PI * best as f64 / n as f64;
        let gap = (th - branch).rem_euclid(2.0 * PI);
        assert!(gap.min(2.0 * PI - gap).to_degrees() <= 2.0, "branch {k} peaks at {th}");
    }
}

#[test]
fn soft_extrema_stay_within_their_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10_000 {
        let a = 3.0 * rng.random::<f64>();
        let b = 3.0 * rng.random::<f64>();
        let t = 0.01 + rng.random::<f64>();
        let lo = softmin2(a, b, t);
        assert!(a.min(b) - 1e-12 <= lo && lo <= a.min(b) + t / E + 1e-12);
        let hi = softmax_k(&[a, b], t);
        assert!(a.max(b) - t / E - 1e-12 <= hi && hi <= a.max(b) + 1e-12);
    }
}

#[test]
fn ellipse_radius_gives_the_matching_gaussian() {
    let model = StarModel::new(
        Arc::new(Identity::new(2)),
        Arc::new(ellipsoid_radial(diag_ellipse(4.0, 1.0))),
        Warp::default(),
    )
    .unwrap()
    .normalize(false)
    .unwrap();
    // log N(x; 0, diag(4, 1)).
    let gauss = |x: &Vector| -0.5 * (x[0] * x[0] / 4.0 + x[1] * x[1]) - (2.0 * PI * 2.0).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..200 {
        let x = gaussian_vector(&mut rng, 2, 2.0);
        assert!((model.log_density(&x).unwrap() - gauss(&x)).abs() <= 1e-6);
    }
    let grid = GridSpec {
        x0: -10.0,
        x1: 10.0,
        y0: -10.0,
        y1: 10.0,
        n: 201,
    };
    let values = density_grid(&model, &grid).unwrap();
    assert!((grid_integral(&values, &grid) - 1.0).abs() <= 1e-2);
}

#[test]
fn normalizer_matches_the_enclosed_volume() {
    // The star body {r s : r <= rho(s)} has volume Z / d.
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..5 {
        let e = random_ellipsoid(&mut rng, 2);
        let area = PI * e.eigenvalues().product().sqrt();
        let z = star_normalizer(&ellipsoid_radial(e), NormalizerMethod::Quadrature { points: 4096 }).unwrap();
        assert!((z / (2.0 * area) - 1.0).abs() <= 1e-2, "{z} vs {}", 2.0 * area);
    }
    for _ in 0..5 {
        let e = random_ellipsoid(&mut rng, 3);
        let volume = 4.0 / 3.0 * PI * e.eigenvalues().product().sqrt();
        let method = NormalizerMethod::default_for(3, false).unwrap();
        let z = star_normalizer(&ellipsoid_radial(e), method).unwrap();
        assert!((z / (3.0 * volume) - 1.0).abs() <= 1e-2, "{z} vs {}", 3.0 * volume);
    }
    let doubled = star_normalizer(
        &ConstantRadial::new(3, 2.0),
        NormalizerMethod::default_for(3, false).unwrap(),
    )
    .unwrap();
    assert!((doubled / (8.0 * 4.0 * PI) - 1.0).abs() <= 1e-2);
}

#[test]
fn three_dimensional_density_integrates_to_one() {
    let model = StarModel::new(
        Arc::new(Identity::new(3)),
        Arc::new(lobed_radial(3)),
        Warp::default(),
    )
    .unwrap()
    .normalize(false)
    .unwrap();
    let n = 81;
    let (lo, hi) = (-8.0, 8.0);
    let h = (hi - lo) / (n - 1) as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = Vector::from_vec(vec![lo + i as f64 * h, lo + j as f64 * h, lo + k as f64 * h]);
                total += model.log_density(&x).unwrap().exp();
            }
        }
    }
    let integral = total * h.powi(3);
    assert!((integral - 1.0).abs() <= 1e-2, "integral {integral}");
}

#[test]
fn unit_radius_is_the_flow_gaussian() {
    let flow = perturbed_flow(4, 6);
    let model = StarModel::new(
        Arc::new(flow.clone()),
        Arc::new(ConstantRadial::new(4, 1.0)),
        Warp::default(),
    )
    .unwrap()
    .with_log_normalizer(ln_sphere_area(4));
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..500 {
        let x = gaussian_vector(&mut rng, 4, 2.0);
        let z = flow.forward(&x);
        let want = -0.5 * z.norm_squared() - 2.0 * (2.0 * PI).ln();
        assert!((model.log_density(&x).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn angular_histogram_of_samples_follows_rho_squared() {
    let rho = toy_radial().unwrap();
    let model = StarModel::new(Arc::new(Identity::new(2)), Arc::new(rho.clone()), Warp::default()).unwrap();
    let n = 20_000;
    let samples = model.sample(n, 23).unwrap();
    let bins = 24;
    let mut counts = vec![0.0; bins];
    for row in samples.row_iter() {
        let th = row[1].atan2(row[0]).rem_euclid(2.0 * PI);
        counts[((th / (2.0 * PI) * bins as f64) as usize).min(bins - 1)] += 1.0;
    }
    // Expected mass per bin from a fine trapezoid rule of rho(theta)^2.
    let fine = 200;
    let mut mass = vec![0.0; bins];
    for (b, m) in mass.iter_mut().enumerate() {
        for i in 0..fine {
            let th = 2.0 * PI * (b as f64 + (i as f64 + 0.5) / fine as f64) / bins as f64;
            *m += rho.eval(&Vector::from_vec(vec![th.cos(), th.sin()])).powi(2);
        }
    }
    let total: f64 = mass.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(&mass)
        .map(|(c, m)| {
            let e = n as f64 * m / total;
            (c - e).powi(2) / e
        })
        .sum();
    // 95th percentile of chi-squared with 23 degrees of freedom.
    assert!(chi2 < 35.17, "chi2 = {chi2}");
}

#[test]
fn warps_are_increasing_concave_and_invertible() {
    for warp in [Warp::Identity, Warp::Log { a: 10.0 }, Warp::Log { a: 0.5 }] {
        assert_eq!(warp.value(0.0), 0.0);
        assert!(warp.derivative(0.0) > 0.0);
        let grid: Vec<f64> = (0..2001).map(|i| i as f64 * 0.005).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| warp.value(s)).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        assert!(vals.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] <= 1e-14 * w[1].abs().max(1.0)));
        for &t in &vals {
            assert!((warp.value(warp.inverse(t)) - t).abs() <= 1e-10);
        }
    }
    let log = Warp::Log { a: 10.0 };
    assert!((log.value(1.0) - 11f64.ln()).abs() < 1e-15);
    assert!((log.inverse(11f64.ln()) - 1.0).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn negative_log_density_is_convex_along_geodesics(
        x in prop::collection::vec(-3.0..3.0f64, 3),
        y in prop::collection::vec(-3.0..3.0f64, 3),
        seed in 0u64..3,
    ) {
        let model = lobed_model(3, seed);
        let phi = model.composite();
        let g = geodesic(&phi, &Vector::from_vec(x), &Vector::from_vec(y)).unwrap();
        let f: Vec<f64> = (0..65)
            .map(|k| -model.unnormalized_log_density(&g.eval(k as f64 / 64.0)).unwrap())
            .collect();
        for w in f.windows(3) {
            prop_assert!(w[2] - 2.0 * w[1] + w[0] > -1e-9);
        }
    }

    #[test]
    fn star_radial_of_identical_branches_is_one_branch(k in 1usize..5, seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch = ellipsoid_radial(random_ellipsoid(&mut rng, 2));
        let star = StarRadial::new(vec![branch.clone(); k], 0.1).unwrap();
        let s = unit_vector(&mut rng, 2);
        prop_assert!((star.eval(&s) - branch.eval(&s)).abs() <= 1e-12);
    }
}
