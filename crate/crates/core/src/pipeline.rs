//! The three-step fit (flow, latent archetypes, ellipsoidal radial function)
//! and the file-level analyses exposed by the command line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aa::{aa_fit, assign_labels, decode_archetypes, AaConfig};
use crate::diffeo::{fd_directional, Diffeo, Vector};
use crate::ellipsoid::{check_fit, BranchRadial, FitCheck, StarRadial};
use crate::error::{Error, Result};
use crate::flow::{save_checkpoint, train_flow, CouplingFlow, FlowConfig, TrainConfig};
use crate::geometry::{iso_geodesic, Curve, Geodesic, DEFAULT_ARC_KNOTS};
use crate::io::{load_dataset, write_csv, write_labels, save_matrix, DataFormat, Dataset};
use crate::model::{LoadedModel, ModelDocument, RadialSpec, MODEL_VERSION};
use crate::ram::{classify_aggregate, ArchetypeSet, RamResult};
use crate::star::{star_normalizer, NormalizerMethod, StarModel, Warp, MAX_NORMALIZED_DIM};

/// How archetypes relate to branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `k` archetypes, one per branch; points are labeled by their dominant archetype.
    #[default]
    Unlabeled,
    /// One branch per class with `k` archetypes each; labels come with the data.
    Labeled,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unlabeled" => Ok(Mode::Unlabeled),
            "labeled" => Ok(Mode::Labeled),
            other => Err(Error::invalid(format!("unknown mode {other:?}, expected unlabeled or labeled"))),
        }
    }
}

/// Configuration of a full fit, read from JSON.
///
/// Relative paths are resolved against the directory of the configuration
/// file. The flow, shuffling and archetype seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Defaults to the format implied by the data file extension.
    pub format: Option<DataFormat>,
    pub label_column: Option<usize>,
    pub mode: Mode,
    /// Archetypes per branch in labeled mode, number of branches otherwise.
    pub k: usize,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    /// Floor factor of the leading ellipsoid axis; must exceed 1.
    pub alpha: f64,
    /// Floor of the remaining axes; must lie in `(0, alpha)`.
    pub beta: f64,
    /// Softmin temperature inside each branch.
    pub t_min: f64,
    /// Softmax temperature across branches.
    pub t_max: f64,
    pub warp_a: f64,
    pub seed: u64,
    pub aa_max_outer: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            format: None,
            label_column: None,
            mode: Mode::Unlabeled,
            k: 4,
            flow: FlowConfig::default(),
            train: TrainConfig::default(),
            alpha: crate::ellipsoid::DEFAULT_ALPHA,
            beta: crate::ellipsoid::DEFAULT_BETA,
            t_min: crate::ellipsoid::DEFAULT_TEMPERATURE,
            t_max: crate::ellipsoid::DEFAULT_TEMPERATURE,
            warp_a: 10.0,
            seed: 0,
            aa_max_outer: 500,
            out: None,
        }
    }
}

impl RunConfig {
    /// Reads, resolves relative paths and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.data = cfg.data.map(|p| base.join(p));
        cfg.out = cfg.out.map(|p| base.join(p));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks parameter ranges and that the data file exists; runs before any compute.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < self.alpha) {
            return Err(Error::invalid(format!(
                "beta must lie in (0, alpha = {}), got {}",
                self.alpha, self.beta
            )));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        for (name, t) in [("t_min", self.t_min), ("t_max", self.t_max)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {t}")));
            }
        }
        if self.flow.hidden == 0 {
            return Err(Error::invalid("flow.hidden must be positive"));
        }
        if self.aa_max_outer == 0 {
            return Err(Error::invalid("aa_max_outer must be positive"));
        }
        self.warp().validate()?;
        self.train.validate()?;
        if let Some(p) = &self.data {
            if !p.is_file() {
                return Err(Error::invalid(format!("data file {} does not exist", p.display())));
            }
        }
        if self.mode == Mode::Labeled && self.data.is_some() && self.label_column.is_none() {
            return Err(Error::invalid("labeled mode needs label_column"));
        }
        Ok(())
    }

    pub fn warp(&self) -> Warp {
        Warp::Log { a: self.warp_a }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            seed: self.seed,
            ..self.flow
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(1),
            ..self.train
        }
    }

    pub fn aa_config(&self, k: usize, group: usize) -> AaConfig {
        AaConfig {
            max_outer: self.aa_max_outer,
            ..AaConfig::new(k, self.seed.wrapping_add(2 + group as u64))
        }
    }

    /// Loads the configured dataset.
    pub fn load_data(&self) -> Result<Dataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Error::invalid("configuration names no data file"))?;
        let format = self.format.unwrap_or_else(|| DataFormat::from_path(path));
        load_dataset(path, format, self.label_column)
    }
}

/// Everything produced by [`three_step_fit`].
pub struct FitOutput {
    pub flow: CouplingFlow,
    /// Full-data negative log-likelihood at initialization and after each epoch.
    pub history: Vec<f64>,
    pub radial: StarRadial,
    pub model: StarModel,
    /// Ambient archetypes as columns.
    pub archetypes: DMatrix<f64>,
    /// Branch of each archetype.
    pub archetype_labels: Vec<usize>,
    /// Branch of each data point.
    pub point_labels: Vec<usize>,
    /// Final archetypal objective per archetype group.
    pub aa_objectives: Vec<f64>,
    /// Off-centered and centered postconditions per branch.
    pub fit_checks: Vec<[FitCheck; 2]>,
    pub branch_sizes: Vec<usize>,
}

/// Trains the base flow, runs archetypal analysis in its latent space, and
/// fits one ellipsoidal branch per archetype group.
pub fn three_step_fit(cfg: &RunConfig, data: &Dataset) -> Result<FitOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let d = data.dim();

    let flow = CouplingFlow::new(d, &cfg.flow_config()).map_err(|e| e.in_stage("flow"))?;
    let trained = train_flow(flow, &data.values, &cfg.train_config()).map_err(|e| e.in_stage("flow"))?;
    let flow = trained.flow;
    let latent = flow.forward_batch(&data.values.transpose());

    let (archetypes, archetype_labels, point_labels, aa_objectives) = match cfg.mode {
        Mode::Unlabeled => {
            let f = aa_fit(&latent, &cfg.aa_config(cfg.k, 0)).map_err(|e| e.in_stage("archetypes"))?;
            let z = decode_archetypes(&flow, &latent, &f.b).map_err(|e| e.in_stage("archetypes"))?;
            (z, (0..cfg.k).collect(), assign_labels(&f.a), vec![f.objective])
        }
        Mode::Labeled => {
            let labels = data.labels.clone().ok_or_else(|| {
                Error::invalid("labeled mode needs a dataset with labels").in_stage("archetypes")
            })?;
            let classes = data.num_classes();
            let mut z = DMatrix::zeros(d, classes * cfg.k);
            let mut arch_labels = Vec::with_capacity(classes * cfg.k);
            let mut objectives = Vec::with_capacity(classes);
            for c in 0..classes {
                let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                if members.len() < cfg.k {
                    return Err(Error::invalid(format!(
                        "class {c} has {} points but k = {} archetypes were requested; lower k",
                        members.len(),
                        cfg.k
                    ))
                    .in_stage("archetypes"));
                }
                let y = latent.select_columns(&members);
                let f = aa_fit(&y, &cfg.aa_config(cfg.k, c)).map_err(|e| e.in_stage("archetypes"))?;
                let zc = decode_archetypes(&flow, &y, &f.b).map_err(|e| e.in_stage("archetypes"))?;
                z.columns_mut(c * cfg.k, cfg.k).copy_from(&zc);
                arch_labels.extend(std::iter::repeat_n(c, cfg.k));
                objectives.push(f.objective);
            }
            (z, arch_labels, labels, objectives)
        }
    };

    let branches = archetype_labels.iter().max().map_or(0, |m| m + 1);
    let mut radials = Vec::with_capacity(branches);
    let mut fit_checks = Vec::with_capacity(branches);
    let mut branch_sizes = Vec::with_capacity(branches);
    for j in 0..branches {
        let members: Vec<usize> = (0..point_labels.len()).filter(|&i| point_labels[i] == j).collect();
        if members.is_empty() {
            return Err(Error::invalid(format!(
                "branch {j} received no points; lower k or inspect the archetype weights"
            ))
            .in_stage("radial"));
        }
        let y = latent.select_columns(&members).transpose();
        let b = BranchRadial::fit(&y, cfg.alpha, cfg.beta, cfg.t_min).map_err(|e| e.in_stage("radial"))?;
        let checks = [
            check_fit(&y, b.offcentered()).map_err(|e| e.in_stage("radial"))?,
            check_fit(&y, b.centered()).map_err(|e| e.in_stage("radial"))?,
        ];
        radials.push(b);
        fit_checks.push(checks);
        branch_sizes.push(members.len());
    }
    let radial = StarRadial::new(radials, cfg.t_max).map_err(|e| e.in_stage("radial"))?;
    let model = StarModel::new(Arc::new(flow.clone()), Arc::new(radial.clone()), cfg.warp())
        .and_then(|m| m.normalize(false))
        .map_err(|e| e.in_stage("normalizer"))?;

    Ok(FitOutput {
        flow,
        history: trained.history,
        radial,
        model,
        archetypes,
        archetype_labels,
        point_labels,
        aa_objectives,
        fit_checks,
        branch_sizes,
    })
}

impl FitOutput {
    pub fn document(&self, flow_checkpoint: &str) -> ModelDocument {
        ModelDocument {
            version: MODEL_VERSION,
            dim: self.flow.dim(),
            warp: self.model.warp(),
            radial: RadialSpec::from_star(&self.radial),
            flow_checkpoint: Some(flow_checkpoint.to_string()),
            log_normalizer: self.model.log_normalizer(),
        }
    }
}

/// Summary written next to the fit outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub version: u32,
    pub data: String,
    pub points: usize,
    pub dim: usize,
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub branches: usize,
    pub branch_sizes: Vec<usize>,
    pub initial_nll: f64,
    pub final_nll: f64,
    pub aa_objectives: Vec<f64>,
    pub log_normalizer: Option<f64>,
    pub postconditions_hold: bool,
    pub files: Vec<String>,
}

pub const MODEL_FILE: &str = "model.json";
pub const FLOW_FILE: &str = "flow.sfaa";
pub const ARCHETYPES_FILE: &str = "archetypes.sfam";
pub const ARCHETYPES_CSV: &str = "archetypes.csv";
pub const ARCHETYPE_LABELS_FILE: &str = "archetype_labels.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the model, checkpoint, archetypes (one per row), labels, loss
/// history and a manifest into `dir`.
pub fn write_fit_outputs(dir: &Path, fit: &FitOutput, cfg: &RunConfig, data: &Dataset) -> Result<FitManifest> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&fit.flow, dir.join(FLOW_FILE))?;
    fit.document(FLOW_FILE).save(dir.join(MODEL_FILE))?;
    let rows = fit.archetypes.transpose();
    save_matrix(dir.join(ARCHETYPES_FILE), &rows)?;
    let header: Vec<String> = (0..rows.ncols()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(dir.join(ARCHETYPES_CSV), &rows, Some(&header))?;
    write_labels(dir.join(ARCHETYPE_LABELS_FILE), &fit.archetype_labels)?;
    write_labels(dir.join(LABELS_FILE), &fit.point_labels)?;
    let loss = DMatrix::from_fn(fit.history.len(), 2, |i, j| if j == 0 { i as f64 } else { fit.history[i] });
    write_csv(dir.join(LOSS_FILE), &loss, Some(&["epoch", "nll"]))?;
    let manifest = FitManifest {
        version: MODEL_VERSION,
        data: data.provenance.clone(),
        points: data.len(),
        dim: data.dim(),
        mode: cfg.mode,
        k: cfg.k,
        seed: cfg.seed,
        branches: fit.radial.branches().len(),
        branch_sizes: fit.branch_sizes.clone(),
        initial_nll: fit.history[0],
        final_nll: *fit.history.last().expect("history holds the initial loss"),
        aa_objectives: fit.aa_objectives.clone(),
        log_normalizer: fit.model.log_normalizer(),
        postconditions_hold: fit.fit_checks.iter().flatten().all(FitCheck::holds),
        files: [
            MODEL_FILE,
            FLOW_FILE,
            ARCHETYPES_FILE,
            ARCHETYPES_CSV,
            ARCHETYPE_LABELS_FILE,
            LABELS_FILE,
            LOSS_FILE,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// `frames` points along the pullback geodesic from `x` to `y`, one per row.
/// With `iso` the frames are equally spaced in `l2` arc length.
pub fn geodesic_frames(phi: &dyn Diffeo, x: &Vector, y: &Vector, frames: usize, iso: bool) -> Result<DMatrix<f64>> {
    if frames < 2 {
        return Err(Error::invalid("a geodesic needs at least 2 frames"));
    }
    let points = if iso {
        iso_geodesic(phi, x, y, DEFAULT_ARC_KNOTS.max(4 * frames))?.sample(frames)
    } else {
        Geodesic::new(phi, x, y)?.sample(frames)
    };
    Ok(DMatrix::from_fn(frames, x.len(), |i, j| points[i][j]))
}

/// Coefficient of variation of consecutive chord lengths between rows.
pub fn chord_cv(frames: &DMatrix<f64>) -> f64 {
    let chords: Vec<f64> = (1..frames.nrows())
        .map(|i| (frames.row(i) - frames.row(i - 1)).norm())
        .collect();
    let n = chords.len() as f64;
    let mean = chords.iter().sum::<f64>() / n;
    let var = chords.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// A regular two-dimensional grid `[x0, x1] x [y0, y1]` with `n` nodes per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub n: usize,
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// Parses `x0,x1,y0,y1,n`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::invalid(format!("grid {s:?} is not x0,x1,y0,y1,n"));
        if parts.len() != 5 {
            return Err(bad());
        }
        let f: Vec<f64> = parts[..4]
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let n: usize = parts[4].parse().map_err(|_| bad())?;
        let g = GridSpec {
            x0: f[0],
            x1: f[1],
            y0: f[2],
            y1: f[3],
            n,
        };
        if n < 2 || !(g.x1 > g.x0) || !(g.y1 > g.y0) {
            return Err(bad());
        }
        Ok(g)
    }
}

impl GridSpec {
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let m = (self.n - 1) as f64;
        (
            self.x0 + (self.x1 - self.x0) * i as f64 / m,
            self.y0 + (self.y1 - self.y0) * j as f64 / m,
        )
    }

    pub fn cell_area(&self) -> f64 {
        let m = (self.n - 1) as f64;
        (self.x1 - self.x0) * (self.y1 - self.y0) / (m * m)
    }
}

/// Rows `(x, y, log p)` over the grid, `x` varying slowest.
pub fn density_grid(model: &StarModel, grid: &GridSpec) -> Result<DMatrix<f64>> {
    if model.dim() != 2 {
        return Err(Error::invalid(format!(
            "density grids need a two-dimensional model, got d = {}",
            model.dim()
        )));
    }
    let mut out = DMatrix::zeros(grid.n * grid.n, 3);
    for i in 0..grid.n {
        for j in 0..grid.n {
            let (x, y) = grid.node(i, j);
            let r = i * grid.n + j;
            out[(r, 0)] = x;
            out[(r, 1)] = y;
            out[(r, 2)] = model.log_density(&Vector::from_vec(vec![x, y]))?;
        }
    }
    Ok(out)
}

/// Trapezoidal integral of `exp(log p)` from the rows of [`density_grid`].
pub fn grid_integral(values: &DMatrix<f64>, grid: &GridSpec) -> f64 {
    let mut total = 0.0;
    for i in 0..grid.n {
        for j in 0..grid.n {
            let wi = if i == 0 || i == grid.n - 1 { 0.5 } else { 1.0 };
            let wj = if j == 0 || j == grid.n - 1 { 0.5 } else { 1.0 };
            total += wi * wj * values[(i * grid.n + j, 2)].exp();
        }
    }
    total * grid.cell_area()
}

/// Batch statistics of RAM results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamSummary {
    pub points: usize,
    pub failures: usize,
    pub mean_error: f64,
    pub mean_relaxed_error: f64,
    /// Fraction of points whose refined error does not exceed the relaxed error.
    pub not_worse_fraction: f64,
    /// Fraction of points whose refined error is strictly smaller.
    pub improved_fraction: f64,
    pub relaxed_converged_fraction: f64,
    pub converged_fraction: f64,
    pub max_relaxed_iterations: usize,
    pub mean_refine_iterations: f64,
    pub interior_rank: usize,
}

/// Slack below which a refined error counts as no worse than the relaxed one.
pub const ERROR_TIE_SLACK: f64 = 1e-12;

pub fn summarize_ram(results: &[Result<RamResult>], archetypes: &ArchetypeSet) -> RamSummary {
    let ok: Vec<&RamResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let n = ok.len().max(1) as f64;
    let frac = |f: &dyn Fn(&RamResult) -> bool| ok.iter().filter(|r| f(r)).count() as f64 / n;
    RamSummary {
        points: results.len(),
        failures: results.len() - ok.len(),
        mean_error: ok.iter().map(|r| r.error).sum::<f64>() / n,
        mean_relaxed_error: ok.iter().map(|r| r.relaxed_error).sum::<f64>() / n,
        not_worse_fraction: frac(&|r| r.error <= r.relaxed_error + ERROR_TIE_SLACK),
        improved_fraction: frac(&|r| r.error < r.relaxed_error),
        relaxed_converged_fraction: frac(&|r| r.relaxed_converged),
        converged_fraction: frac(&|r| r.converged()),
        max_relaxed_iterations: ok.iter().map(|r| r.relaxed_iterations).max().unwrap_or(0),
        mean_refine_iterations: ok.iter().map(|r| r.refine_iterations as f64).sum::<f64>() / n,
        interior_rank: archetypes.interior_rank(1e-10),
    }
}

/// Class of a result: aggregated by archetype labels when given, else the dominant archetype.
fn result_class(r: &RamResult, labels: Option<&[usize]>) -> Result<usize> {
    match labels {
        Some(l) => Ok(classify_aggregate(&r.weights, l)?.class),
        None => Ok(r.weights.argmax()),
    }
}

/// Columns `index, class, lambda_j..., iso_lambda_j..., error, iterations, converged`.
/// Failed points keep their row with empty fields.
pub fn write_ram_csv(path: &Path, results: &[Result<RamResult>], k: usize, labels: Option<&[usize]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["index".to_string(), "class".to_string()];
    header.extend((0..k).map(|j| format!("lambda_{j}")));
    header.extend((0..k).map(|j| format!("iso_lambda_{j}")));
    header.extend(["error", "iterations", "converged"].map(String::from));
    w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
    for (i, r) in results.iter().enumerate() {
        let mut row = vec![i.to_string()];
        match r {
            Ok(r) => {
                row.push(result_class(r, labels)?.to_string());
                row.extend(r.weights.as_slice().iter().map(|v| format!("{v:.16e}")));
                row.extend(r.iso_weights.as_slice().iter().map(|v| format!("{v:.16e}")));
                row.push(format!("{:.16e}", r.error));
                row.push((r.relaxed_iterations + r.refine_iterations).to_string());
                row.push(u8::from(r.converged()).to_string());
            }
            Err(_) => {
                row.extend(std::iter::repeat_n(String::new(), 2 * k + 3));
                row.push("0".into());
            }
        }
        w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `index, class, iso_class, mass_c..., iso_mass_c...`: class masses
/// aggregated from the plain and the iso-corrected weights.
pub fn write_classify_csv(path: &Path, results: &[Result<RamResult>], labels: &[usize]) -> Result<()> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["index".to_string(), "class".to_string(), "iso_class".to_string()];
    header.extend((0..classes).map(|c| format!("mass_{c}")));
    header.extend((0..classes).map(|c| format!("iso_mass_{c}")));
    w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
    for (i, r) in results.iter().enumerate() {
        let mut row = vec![i.to_string()];
        match r {
            Ok(r) => {
                let plain = classify_aggregate(&r.weights, labels)?;
                let iso = classify_aggregate(&r.iso_weights, labels)?;
                row.push(plain.class.to_string());
                row.push(iso.class.to_string());
                row.extend(plain.masses.iter().map(|v| format!("{v:.16e}")));
                row.extend(iso.masses.iter().map(|v| format!("{v:.16e}")));
            }
            Err(_) => row.extend(std::iter::repeat_n(String::new(), 2 + 2 * classes)),
        }
        w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Projected points `RAM(x)` as rows; failed points are `NaN`.
pub fn projected_points(results: &[Result<RamResult>], dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(results.len(), dim, f64::NAN);
    for (i, r) in results.iter().enumerate() {
        if let Ok(r) = r {
            out.set_row(i, &r.point.transpose());
        }
    }
    out
}

/// Outcome of one invariant check on a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Points used by [`check_model`] when no data is supplied.
pub const CHECK_PROBES: usize = 256;

/// Runs the invariant suite on a loaded model. `probes` (rows) default to
/// model samples; `archetypes` (columns) are checked for consistent embeddings.
pub fn check_model(loaded: &LoadedModel, probes: Option<&DMatrix<f64>>, archetypes: Option<&DMatrix<f64>>) -> Vec<CheckOutcome> {
    let model = &loaded.model;
    let d = model.dim();
    let mut out = Vec::new();

    let sampled;
    let probes = match probes {
        Some(p) => p,
        None => match model.sample(CHECK_PROBES, 0) {
            Ok(s) => {
                sampled = s;
                &sampled
            }
            Err(e) => {
                out.push(outcome("sampling", false, e.to_string()));
                return out;
            }
        },
    };
    if probes.ncols() != d {
        out.push(outcome(
            "probe dimension",
            false,
            format!("probes have {} columns, model has d = {d}", probes.ncols()),
        ));
        return out;
    }
    let points: Vec<Vector> = probes.row_iter().map(|r| r.transpose()).collect();
    let phi = model.composite();

    let worst_roundtrip = points
        .iter()
        .map(|x| (phi.inverse(&phi.forward(x)) - x).norm() / (1.0 + x.norm()))
        .fold(0.0, f64::max);
    out.push(outcome(
        "composite round trip",
        worst_roundtrip <= 1e-8,
        format!("max relative error {worst_roundtrip:.3e} (limit 1e-8)"),
    ));

    let mut worst_jvp: f64 = 0.0;
    for (i, x) in points.iter().take(64).enumerate() {
        let v = Vector::from_fn(d, |j, _| ((i * d + j) as f64 * 0.77).sin());
        let a = phi.jvp(x, &v);
        let fd = fd_directional(|p| phi.forward(p), x, &v);
        worst_jvp = worst_jvp.max((a - &fd).norm() / (1.0 + fd.norm()));
    }
    out.push(outcome(
        "composite jvp",
        worst_jvp <= 1e-4,
        format!("max relative deviation from central differences {worst_jvp:.3e} (limit 1e-4)"),
    ));

    let base = model.base();
    let dets: Vec<_> = points.iter().map(|x| base.log_det(x)).collect();
    let constant = dets.iter().all(|l| l.map_or(false, |l| l.constant));
    let spread = dets
        .iter()
        .flatten()
        .map(|l| l.value)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let spread = spread.1 - spread.0;
    out.push(outcome(
        "base log-determinant constant",
        constant && spread <= 1e-12,
        format!("declared constant: {constant}, spread {spread:.3e}"),
    ));

    let rho = model.radial();
    let (lo, hi) = rho.bounds();
    let mut within = lo > 0.0 && hi.is_finite();
    let mut rmin = f64::INFINITY;
    let mut rmax: f64 = 0.0;
    for x in &points {
        let z = base.forward(x);
        let r = z.norm();
        if r > 0.0 {
            let v = rho.eval(&(z / r));
            rmin = rmin.min(v);
            rmax = rmax.max(v);
            within &= v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
        }
    }
    out.push(outcome(
        "radial bounds",
        within,
        format!("observed [{rmin:.4}, {rmax:.4}] within declared [{lo:.4}, {hi:.4}]"),
    ));

    if let Some(star) = &loaded.star {
        let inside = star.branches().iter().all(|b| {
            b.offcentered().center_quadratic() < 1.0 && b.centered().center_quadratic() < 1.0
        });
        out.push(outcome(
            "ellipsoids contain the origin",
            inside,
            format!("{} branches", star.branches().len()),
        ));
    }

    match model.log_normalizer() {
        None => out.push(outcome("normalizer", false, "model has no cached normalizer".into())),
        Some(stored) if d <= MAX_NORMALIZED_DIM => {
            let fresh = NormalizerMethod::default_for(d, false)
                .and_then(|m| star_normalizer(rho.as_ref(), m))
                .map(f64::ln);
            match fresh {
                Ok(f) => out.push(outcome(
                    "normalizer",
                    (f - stored).abs() <= 1e-9 * (1.0 + f.abs()),
                    format!("stored ln Z {stored:.12}, recomputed {f:.12}"),
                )),
                Err(e) => out.push(outcome("normalizer", false, e.to_string())),
            }
        }
        Some(stored) => out.push(outcome(
            "normalizer",
            stored.is_finite(),
            format!("stored ln Z {stored:.12}; not recomputed above d = {MAX_NORMALIZED_DIM}"),
        )),
    }

    let bad = points
        .iter()
        .filter(|x| !model.log_density(x).is_ok_and(f64::is_finite))
        .count();
    out.push(outcome(
        "finite log-density",
        bad == 0,
        format!("{bad} of {} probes non-finite", points.len()),
    ));

    if let Some(z) = archetypes {
        match ArchetypeSet::new(&phi, z.clone(), None) {
            Ok(set) => {
                let worst = (0..set.len())
                    .map(|j| {
                        let back = phi.inverse(&DVector::from(set.embedded().column(j)));
                        (back - set.archetype(j)).norm() / (1.0 + set.archetype(j).norm())
                    })
                    .fold(0.0, f64::max);
                out.push(outcome(
                    "archetype embeddings",
                    worst <= 1e-8,
                    format!("{} archetypes, rank {}, max round-trip error {worst:.3e}", set.len(), set.interior_rank(1e-10)),
                ));
            }
            Err(e) => out.push(outcome("archetype embeddings", false, e.to_string())),
        }
    }
    out
}

/// Archetypes stored one per row, returned as columns.
pub fn load_archetypes(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    Ok(crate::io::load_matrix(path)?.transpose())
}
