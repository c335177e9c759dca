//! Synthetic data and a small hand-built star model for tests, fixtures and demos.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffeo::{Diffeo, Vector};
use crate::ellipsoid::{BranchRadial, Ellipsoid, StarRadial, DEFAULT_TEMPERATURE};
use crate::error::Result;
use crate::flow::{save_checkpoint, CouplingFlow, FlowConfig};
use crate::io::{write_csv, write_labels};
use crate::model::{ModelDocument, RadialSpec, MODEL_VERSION};
use crate::pipeline::RunConfig;
use crate::star::{RadialFn, StarModel, Warp};

/// Parameters of the four-armed cross data set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossSpec {
    pub n: usize,
    pub arm_length: f64,
    /// Standard deviation of the isotropic Gaussian noise added to every point.
    pub noise: f64,
    /// Direction of the first arm; the others follow at right angles.
    pub angle: f64,
    pub seed: u64,
}

impl Default for CrossSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            arm_length: 3.0,
            noise: 0.15,
            angle: PI / 4.0,
            seed: 7,
        }
    }
}

impl CrossSpec {
    pub fn arm_direction(&self, k: usize) -> Vector {
        let th = self.angle + k as f64 * FRAC_PI_2;
        Vector::from_vec(vec![th.cos(), th.sin()])
    }

    /// Arm whose direction is angularly closest to `x`.
    pub fn nearest_arm(&self, x: &Vector) -> usize {
        (0..4)
            .max_by(|&a, &b| self.arm_direction(a).dot(x).total_cmp(&self.arm_direction(b).dot(x)))
            .expect("four arms")
    }
}

/// Rows of points on four arms `r u_k + noise`, `r ~ U(0, L)`, with their arm ids.
pub fn cross_data(spec: &CrossSpec) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = DMatrix::zeros(spec.n, 2);
    let mut arms = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let k = i % 4;
        let r = rng.random::<f64>() * spec.arm_length;
        let u = spec.arm_direction(k);
        for j in 0..2 {
            x[(i, j)] = r * u[j] + spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
        arms.push(k);
    }
    (x, arms)
}

/// Vertices (columns) of an equilateral triangle of side 1 centered at `offset`.
pub fn triangle_vertices(offset: [f64; 2]) -> DMatrix<f64> {
    let h = 3f64.sqrt() / 2.0;
    let pts = [[-0.5, -h / 3.0], [0.5, -h / 3.0], [0.0, 2.0 * h / 3.0]];
    DMatrix::from_fn(2, 3, |i, j| pts[j][i] + offset[i])
}

/// `n` uniform points of the triangle hull as columns.
pub fn triangle_hull(n: usize, vertices: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = DMatrix::zeros(2, n);
    for i in 0..n {
        let (mut a, mut b): (f64, f64) = (rng.random(), rng.random());
        if a + b > 1.0 {
            a = 1.0 - a;
            b = 1.0 - b;
        }
        let p = vertices.column(0) * (1.0 - a - b) + vertices.column(1) * a + vertices.column(2) * b;
        y.set_column(i, &p);
    }
    y
}

/// Two Gaussian blobs with labels 0 and 1, as rows.
pub fn two_clusters(n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[2.0, 0.5], [-1.5, -1.0]];
    let mut x = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        for j in 0..2 {
            x[(i, j)] = centers[c][j] + 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
        labels.push(c);
    }
    (x, labels)
}

/// Branch along unit `u`: a narrow ellipsoid around `center_dist u` intersected
/// with a centered ellipsoid elongated along `u`.
fn branch(u: &Vector, center_dist: f64, along: f64, across: f64, reach: f64) -> Result<BranchRadial> {
    let frame = DMatrix::from_column_slice(2, 2, &[u[0], u[1], -u[1], u[0]]);
    let off = Ellipsoid::new(
        frame.clone(),
        DVector::from_vec(vec![along * along, across * across]),
        u * center_dist,
    )?;
    let cen = Ellipsoid::new(
        frame,
        DVector::from_vec(vec![reach * reach, (1.5 * across).powi(2)]),
        Vector::zeros(2),
    )?;
    BranchRadial::new(off, cen, DEFAULT_TEMPERATURE)
}

/// The bundled two-dimensional star model with four branches of unequal length.
pub struct ToyStar {
    pub model: StarModel,
    pub flow: CouplingFlow,
    pub radial: StarRadial,
    /// Archetypes at the branch tips, one per column.
    pub archetypes: DMatrix<f64>,
}

/// A gently bending base flow with fixed parameters.
pub fn toy_flow() -> CouplingFlow {
    let mut flow = CouplingFlow::new(
        2,
        &FlowConfig {
            blocks: 1,
            hidden: 4,
            random_mix: false,
            seed: 0,
        },
    )
    .expect("valid toy flow");
    let params: Vec<f64> = flow
        .params()
        .iter()
        .enumerate()
        .map(|(i, &p)| if i < 4 { p } else { 0.25 * ((i as f64) * 1.3).sin() })
        .collect();
    flow.set_params(&params).expect("parameter count");
    flow
}

/// Radial function of the toy model.
pub fn toy_radial() -> Result<StarRadial> {
    let lengths = [(1.2, 1.6, 2.6), (1.0, 1.3, 2.2), (1.4, 1.8, 3.0), (0.9, 1.2, 2.0)];
    let branches = lengths
        .iter()
        .enumerate()
        .map(|(k, &(c, along, reach))| {
            let th = 0.3 + k as f64 * FRAC_PI_2;
            let u = Vector::from_vec(vec![th.cos(), th.sin()]);
            branch(&u, c, along, 0.35, reach)
        })
        .collect::<Result<Vec<_>>>()?;
    StarRadial::new(branches, DEFAULT_TEMPERATURE)
}

/// Radius multiple of `rho` at which the toy archetypes sit.
pub const TOY_TIP_SCALE: f64 = 1.6;

pub fn toy_star() -> Result<ToyStar> {
    let flow = toy_flow();
    let radial = toy_radial()?;
    let model = StarModel::new(Arc::new(flow.clone()), Arc::new(radial.clone()), Warp::default())?.normalize(false)?;
    let mut archetypes = DMatrix::zeros(2, 4);
    for k in 0..4 {
        let th = 0.3 + k as f64 * FRAC_PI_2;
        let u = Vector::from_vec(vec![th.cos(), th.sin()]);
        let z = &u * (TOY_TIP_SCALE * radial.eval(&u));
        archetypes.set_column(k, &flow.inverse(&z));
    }
    Ok(ToyStar {
        model,
        flow,
        radial,
        archetypes,
    })
}

impl ToyStar {
    pub fn document(&self, flow_checkpoint: &str) -> ModelDocument {
        ModelDocument {
            version: MODEL_VERSION,
            dim: 2,
            warp: self.model.warp(),
            radial: RadialSpec::from_star(&self.radial),
            flow_checkpoint: Some(flow_checkpoint.to_string()),
            log_normalizer: self.model.log_normalizer(),
        }
    }
}

pub const CROSS_DATA_FILE: &str = "cross.csv";
pub const CROSS_SPEC_FILE: &str = "cross_spec.json";
pub const CROSS_CONFIG_FILE: &str = "cross_config.json";
pub const TOY_MODEL_FILE: &str = "model.json";
pub const TOY_FLOW_FILE: &str = "flow.sfaa";
pub const TOY_ARCHETYPES_FILE: &str = "archetypes.csv";
pub const TOY_ARCHETYPE_LABELS_FILE: &str = "archetype_labels.csv";

/// Fit configuration bundled with the cross data: a light flow keeps the arms
/// recognizable in the latent space, so latent archetypes land on the arm tips.
pub fn cross_run_config() -> RunConfig {
    let mut cfg = RunConfig {
        data: Some(PathBuf::from(CROSS_DATA_FILE)),
        k: 4,
        seed: 0,
        ..RunConfig::default()
    };
    cfg.flow.blocks = 2;
    cfg.flow.hidden = 8;
    cfg.train.epochs = 20;
    cfg
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the cross data, its generator parameters (including the noise
/// scale) and the bundled fit configuration into `dir`.
pub fn write_cross_fixture(dir: &Path, spec: &CrossSpec) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (x, _) = cross_data(spec);
    write_csv(dir.join(CROSS_DATA_FILE), &x, Some(&["x0", "x1"]))?;
    write_json(&dir.join(CROSS_SPEC_FILE), spec)?;
    write_json(&dir.join(CROSS_CONFIG_FILE), &cross_run_config())
}

/// Writes the toy star model, its flow checkpoint, archetypes (one per row)
/// and one class per archetype into `dir`.
pub fn write_toy_fixture(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let toy = toy_star()?;
    save_checkpoint(&toy.flow, dir.join(TOY_FLOW_FILE))?;
    toy.document(TOY_FLOW_FILE).save(dir.join(TOY_MODEL_FILE))?;
    write_csv(dir.join(TOY_ARCHETYPES_FILE), &toy.archetypes.transpose(), Some(&["x0", "x1"]))?;
    write_labels(dir.join(TOY_ARCHETYPE_LABELS_FILE), &[0, 1, 2, 3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_arms_are_balanced() {
        let spec = CrossSpec { n: 400, ..CrossSpec::default() };
        let (x, arms) = cross_data(&spec);
        assert_eq!(x.nrows(), 400);
        for k in 0..4 {
            assert_eq!(arms.iter().filter(|&&a| a == k).count(), 100);
        }
    }

    #[test]
    fn triangle_points_are_inside() {
        let v = triangle_vertices([0.0, 0.0]);
        let y = triangle_hull(200, &v, 3);
        for p in y.column_iter() {
            // Barycentric coordinates are nonnegative.
            let m = DMatrix::from_row_slice(2, 2, &[v[(0, 1)] - v[(0, 0)], v[(0, 2)] - v[(0, 0)], v[(1, 1)] - v[(1, 0)], v[(1, 2)] - v[(1, 0)]]);
            let ab = m.lu().solve(&(p - v.column(0))).unwrap();
            assert!(ab[0] >= -1e-12 && ab[1] >= -1e-12 && ab[0] + ab[1] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn toy_model_builds() {
        let t = toy_star().unwrap();
        assert_eq!(t.archetypes.ncols(), 4);
        let (lo, hi) = t.radial.bounds();
        assert!(lo > 0.0 && hi > lo);
    }
}
