//! `starflow`: fit deformed star models and run archetypal analyses on files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use starflow::io::{load_dataset, read_labels, write_csv, DataFormat};
use starflow::model::{load_model, LoadedModel};
use starflow::pipeline::{
    check_model, chord_cv, density_grid, geodesic_frames, grid_integral, load_archetypes, projected_points,
    summarize_ram, three_step_fit, write_classify_csv, write_fit_outputs, write_ram_csv, GridSpec, Mode, RunConfig,
};
use starflow::ram::{ram_batch, ArchetypeSet, RamConfig};
use starflow::Vector;

#[derive(Parser)]
#[command(name = "starflow", version, about = "Riemannian archetypal analysis on deformed star models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base flow, find archetypes and fit the radial function.
    Fit(FitArgs),
    /// Sample the pullback geodesic between two points.
    Geodesic(GeodesicArgs),
    /// Project data onto the archetype manifold.
    Ram(RamArgs),
    /// Aggregate RAM weights into class masses.
    Classify(RamArgs),
    /// Evaluate the log-density on a two-dimensional grid.
    Density(DensityArgs),
    /// Draw samples from the model.
    Sample(SampleArgs),
    /// Run the invariant suite on a model file; exits non-zero on any failure.
    Check(CheckArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
    /// Data file; overrides the configuration.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// CSV or SFAM matrix with one sample per row.
    #[arg(long)]
    data: PathBuf,
    /// Zero-based CSV column holding class ids, excluded from the features.
    #[arg(long)]
    label_column: Option<usize>,
}

#[derive(Args)]
struct GeodesicArgs {
    #[arg(long)]
    model: PathBuf,
    /// Start point as comma-separated coordinates, or `@j` for archetype `j`.
    #[arg(long, allow_hyphen_values = true)]
    from: String,
    /// End point, in the same notation as `--from`.
    #[arg(long, allow_hyphen_values = true)]
    to: String,
    /// Archetype file resolving `@j` references.
    #[arg(long)]
    archetypes: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    /// Space frames equally in arc length.
    #[arg(long)]
    iso: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RamArgs {
    #[arg(long)]
    model: PathBuf,
    /// Archetypes, one per row.
    #[arg(long)]
    archetypes: PathBuf,
    /// Class of each archetype; required by `classify`.
    #[arg(long)]
    archetype_labels: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    model: PathBuf,
    /// `x0,x1,y0,y1,n`.
    #[arg(long, allow_hyphen_values = true)]
    grid: GridSpec,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    archetypes: Option<PathBuf>,
    /// Probe points; defaults to samples from the model.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<usize>,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Geodesic(a) => geodesic(a),
        Command::Ram(a) => ram(a, false),
        Command::Classify(a) => ram(a, true),
        Command::Density(a) => density(a),
        Command::Sample(a) => sample(a),
        Command::Check(a) => check(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `STARFLOW_THREADS` caps the worker pool used by batch solves.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("STARFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("STARFLOW_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn model_at(path: &Path) -> Result<LoadedModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn data_rows(path: &Path, label_column: Option<usize>) -> Result<DMatrix<f64>> {
    let ds = load_dataset(path, DataFormat::from_path(path), label_column)
        .with_context(|| format!("loading data {}", path.display()))?;
    Ok(ds.values)
}

fn coordinate_header(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

fn write_rows(path: &Path, m: &DMatrix<f64>, header: &[String]) -> Result<()> {
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, m, Some(&h)).with_context(|| format!("writing {}", path.display()))
}

fn fit(a: FitArgs) -> Result<bool> {
    let mut cfg = RunConfig::load(&a.config).with_context(|| format!("reading config {}", a.config.display()))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(d) = a.data {
        cfg.data = Some(d);
    }
    if let Some(o) = a.out {
        cfg.out = Some(o);
    }
    cfg.validate()?;
    let out = cfg.out.clone().context("no output directory; pass --out or set out in the config")?;
    let data = cfg.load_data()?;
    let fit = three_step_fit(&cfg, &data)?;
    let manifest = write_fit_outputs(&out, &fit, &cfg, &data)?;
    println!(
        "fitted {} branches on {} points in d = {}; nll {:.4} -> {:.4}",
        manifest.branches, manifest.points, manifest.dim, manifest.initial_nll, manifest.final_nll
    );
    println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(manifest.postconditions_hold)
}

fn parse_point(spec: &str, archetypes: Option<&DMatrix<f64>>, d: usize) -> Result<Vector> {
    if let Some(j) = spec.strip_prefix('@') {
        let j: usize = j.parse().with_context(|| format!("bad archetype reference {spec:?}"))?;
        let z = archetypes.context("archetype references need --archetypes")?;
        if j >= z.ncols() {
            bail!("archetype {j} out of range; the file holds {}", z.ncols());
        }
        return Ok(z.column(j).into_owned());
    }
    let v: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad point {spec:?}"))?;
    if v.len() != d {
        bail!("point {spec:?} has {} coordinates, model has d = {d}", v.len());
    }
    Ok(Vector::from_vec(v))
}

fn geodesic(a: GeodesicArgs) -> Result<bool> {
    let loaded = model_at(&a.model)?;
    let d = loaded.model.dim();
    let z = a.archetypes.as_deref().map(load_archetypes).transpose()?;
    let x = parse_point(&a.from, z.as_ref(), d)?;
    let y = parse_point(&a.to, z.as_ref(), d)?;
    let phi = loaded.model.composite();
    let frames = geodesic_frames(&phi, &x, &y, a.frames, a.iso)?;
    write_rows(&a.out, &frames, &coordinate_header(d))?;
    println!("{} frames, chord-length variation {:.4}", a.frames, chord_cv(&frames));
    Ok(true)
}

fn ram(a: RamArgs, classify: bool) -> Result<bool> {
    let loaded = model_at(&a.model)?;
    let phi = loaded.model.composite();
    let z = load_archetypes(&a.archetypes)?;
    let labels = a.archetype_labels.as_deref().map(read_labels).transpose()?;
    if classify && labels.is_none() {
        bail!("classify needs --archetype-labels");
    }
    if let Some(l) = &labels {
        if l.len() != z.ncols() {
            bail!("{} archetype labels for {} archetypes", l.len(), z.ncols());
        }
    }
    let set = ArchetypeSet::new(&phi, z, labels.clone())?;
    let x = data_rows(&a.data.data, a.data.label_column)?;
    let results = ram_batch(&phi, &set, &x, &RamConfig::default());
    fs::create_dir_all(&a.out)?;
    let summary = summarize_ram(&results, &set);
    if classify {
        write_classify_csv(&a.out.join("classify.csv"), &results, labels.as_deref().expect("checked above"))?;
    } else {
        write_ram_csv(&a.out.join("ram.csv"), &results, set.len(), labels.as_deref())?;
        write_rows(&a.out.join("ram_projected.csv"), &projected_points(&results, set.dim()), &coordinate_header(set.dim()))?;
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        fs::write(a.out.join("ram_summary.json"), text)?;
    }
    for (i, r) in results.iter().enumerate() {
        if let Err(e) = r {
            eprintln!("point {i}: {e}");
        }
    }
    println!(
        "{} points, {} failed; mean error {:.6} (relaxed {:.6}); refine no worse on {:.1}%",
        summary.points,
        summary.failures,
        summary.mean_error,
        summary.mean_relaxed_error,
        100.0 * summary.not_worse_fraction
    );
    Ok(true)
}

fn density(a: DensityArgs) -> Result<bool> {
    let loaded = model_at(&a.model)?;
    let grid = density_grid(&loaded.model, &a.grid)?;
    write_rows(&a.out, &grid, &["x".into(), "y".into(), "log_density".into()])?;
    println!("grid integral {:.6}", grid_integral(&grid, &a.grid));
    Ok(true)
}

fn sample(a: SampleArgs) -> Result<bool> {
    let loaded = model_at(&a.model)?;
    let s = loaded.model.sample(a.n, a.seed)?;
    write_rows(&a.out, &s, &coordinate_header(loaded.model.dim()))?;
    println!("{} samples", a.n);
    Ok(true)
}

fn check(a: CheckArgs) -> Result<bool> {
    let loaded = model_at(&a.model)?;
    let probes = a.data.as_deref().map(|p| data_rows(p, a.label_column)).transpose()?;
    let z = a.archetypes.as_deref().map(load_archetypes).transpose()?;
    let outcomes = check_model(&loaded, probes.as_ref(), z.as_ref());
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    if let Some(p) = &a.out {
        let mut text = serde_json::to_string_pretty(&outcomes)?;
        text.push('\n');
        fs::write(p, text)?;
    }
    Ok(outcomes.iter().all(|o| o.passed))
}
