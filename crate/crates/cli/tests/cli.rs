use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use starflow::flow::load_checkpoint;
use starflow::io::{load_matrix, read_csv_table, read_labels, write_csv};
use starflow::model::load_model;
use starflow::pipeline::{FitManifest, ARCHETYPES_CSV, ARCHETYPES_FILE, ARCHETYPE_LABELS_FILE, MANIFEST_FILE, MODEL_FILE};
use starflow::toy::{
    two_clusters, write_cross_fixture, write_toy_fixture, CrossSpec, CROSS_CONFIG_FILE, TOY_ARCHETYPES_FILE,
    TOY_ARCHETYPE_LABELS_FILE, TOY_MODEL_FILE,
};
use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn starflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starflow"))
        .args(args)
        .output()
        .expect("starflow binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = starflow(args);
    assert!(
        out.status.success(),
        "starflow {args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

fn toy(name: &str) -> PathBuf {
    fixtures().join("toy").join(name)
}

fn assert_same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut other: Vec<_> = fs::read_dir(b).unwrap().map(|e| e.unwrap().file_name()).collect();
    other.sort();
    assert_eq!(names, other);
    for n in names {
        assert!(
            fs::read(a.join(&n)).unwrap() == fs::read(b.join(&n)).unwrap(),
            "{n:?} differs"
        );
    }
}

#[test]
fn bundled_fixtures_match_their_generators() {
    let tmp = TempDir::new().unwrap();
    write_cross_fixture(&tmp.path().join("cross"), &CrossSpec::default()).unwrap();
    write_toy_fixture(&tmp.path().join("toy")).unwrap();
    assert_same_files(&tmp.path().join("cross"), &fixtures().join("cross"));
    assert_same_files(&tmp.path().join("toy"), &fixtures().join("toy"));
}

#[test]
fn toy_model_passes_its_checks() {
    let tmp = TempDir::new().unwrap();
    let report = tmp.path().join("report.json");
    let stdout = run_ok(&[
        "check",
        "--model",
        s(&toy(TOY_MODEL_FILE)),
        "--archetypes",
        s(&toy(TOY_ARCHETYPES_FILE)),
        "--out",
        s(&report),
    ]);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let outcomes: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert!(outcomes.as_array().unwrap().len() >= 6);
}

#[test]
fn check_rejects_a_wrong_normalizer() {
    let tmp = TempDir::new().unwrap();
    copy_dir(&fixtures().join("toy"), tmp.path());
    let path = tmp.path().join(TOY_MODEL_FILE);
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let z = doc["log_normalizer"].as_f64().unwrap();
    doc["log_normalizer"] = serde_json::json!(z + 0.01);
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = starflow(&["check", "--model", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn geodesic_frames_between_archetypes() {
    let tmp = TempDir::new().unwrap();
    let (model, arch) = (toy(TOY_MODEL_FILE), toy(TOY_ARCHETYPES_FILE));
    let archetypes = read_csv_table(&arch).unwrap();
    for iso in [false, true] {
        let out = tmp.path().join(format!("geo_{iso}.csv"));
        let mut args = vec![
            "geodesic",
            "--model",
            s(&model),
            "--archetypes",
            s(&arch),
            "--from",
            "@0",
            "--to",
            "@2",
            "--frames",
            "33",
            "--out",
            s(&out),
        ];
        if iso {
            args.push("--iso");
        }
        run_ok(&args);
        let frames = read_csv_table(&out).unwrap();
        assert_eq!(frames.shape(), (33, 2));
        for (row, col) in [(0, 0), (32, 2)] {
            let gap = (frames.row(row).transpose() - archetypes.row(col).transpose()).amax();
            assert!(gap <= 1e-9, "endpoint off by {gap}");
        }
    }
    let out = tmp.path().join("line.csv");
    run_ok(&["geodesic", "--model", s(&model), "--from", "-1,0.5", "--to", "2,-1", "--out", s(&out)]);
    assert_eq!(read_csv_table(&out).unwrap().nrows(), 64);
    let bad = starflow(&["geodesic", "--model", s(&model), "--from", "@0", "--to", "1,1", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn density_grid_integrates_to_one() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("density.csv");
    run_ok(&["density", "--model", s(&toy(TOY_MODEL_FILE)), "--grid", "-12,12,-12,12,241", "--out", s(&out)]);
    let grid = read_csv_table(&out).unwrap();
    assert_eq!(grid.shape(), (241 * 241, 3));
    let h = 24.0 / 240.0;
    // Trapezoid weights vanish at the far boundary anyway; a Riemann sum is enough here.
    let total: f64 = grid.column(2).iter().map(|lp| lp.exp()).sum::<f64>() * h * h;
    assert!((total - 1.0).abs() <= 1e-2, "integral {total}");
}

#[test]
fn sampling_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    run_ok(&["sample", "--model", s(&toy(TOY_MODEL_FILE)), "--n", "300", "--seed", "4", "--out", s(&a)]);
    run_ok(&["sample", "--model", s(&toy(TOY_MODEL_FILE)), "--n", "300", "--seed", "4", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(read_csv_table(&a).unwrap().shape(), (300, 2));
}

#[test]
fn ram_and_classify_on_model_samples() {
    let tmp = TempDir::new().unwrap();
    let (model, arch, arch_labels) = (toy(TOY_MODEL_FILE), toy(TOY_ARCHETYPES_FILE), toy(TOY_ARCHETYPE_LABELS_FILE));
    let data = tmp.path().join("data.csv");
    run_ok(&["sample", "--model", s(&model), "--n", "120", "--seed", "9", "--out", s(&data)]);
    let common = [
        "--model",
        s(&model),
        "--archetypes",
        s(&arch),
        "--archetype-labels",
        s(&arch_labels),
        "--data",
        s(&data),
    ];
    let ram_dir = tmp.path().join("ram");
    let mut args = vec!["ram"];
    args.extend(common);
    args.extend(["--out", s(&ram_dir)]);
    run_ok(&args);
    let table = read_csv_table(ram_dir.join("ram.csv")).unwrap();
    assert_eq!(table.nrows(), 120);
    assert_eq!(read_csv_table(ram_dir.join("ram_projected.csv")).unwrap().shape(), (120, 2));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ram_dir.join("ram_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"], 0);
    assert!(summary["not_worse_fraction"].as_f64().unwrap() >= 0.95);

    let class_dir = tmp.path().join("classify");
    let mut args = vec!["classify"];
    args.extend(common);
    args.extend(["--out", s(&class_dir)]);
    run_ok(&args);
    let header = fs::read_to_string(class_dir.join("classify.csv")).unwrap();
    let first = header.lines().next().unwrap();
    assert!(first.contains("class") && first.contains("iso_class"), "{first}");
    let table = read_csv_table(class_dir.join("classify.csv")).unwrap();
    assert_eq!(table.nrows(), 120);
    // Masses of each kind sum to one.
    let names: Vec<&str> = first.split(',').collect();
    for prefix in ["mass_", "iso_mass_"] {
        let cols: Vec<usize> = (0..names.len()).filter(|&c| names[c].starts_with(prefix)).collect();
        assert_eq!(cols.len(), 4);
        for r in 0..table.nrows() {
            let total: f64 = cols.iter().map(|&c| table[(r, c)]).sum();
            assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    let missing = starflow(&["classify", "--model", s(&model), "--archetypes", s(&arch), "--data", s(&data), "--out", s(&class_dir)]);
    assert_eq!(missing.status.code(), Some(2));
}

fn fit_cross(dir: &Path, out: &Path) {
    run_ok(&["fit", "--config", s(&dir.join(CROSS_CONFIG_FILE)), "--out", s(out)]);
}

#[test]
fn cross_fit_is_deterministic_and_reloads() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("cross");
    copy_dir(&fixtures().join("cross"), &dir);
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    fit_cross(&dir, &first);
    fit_cross(&dir, &second);
    assert_same_files(&first, &second);

    let manifest: FitManifest = serde_json::from_str(&fs::read_to_string(first.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert!(manifest.postconditions_hold);
    for name in &manifest.files {
        let path = first.join(name);
        assert!(path.exists(), "{name} listed but missing");
        if name.ends_with(".csv") {
            read_csv_table(&path).unwrap();
        } else if name.ends_with(".sfaa") {
            load_checkpoint(&path).unwrap();
        } else if name.ends_with(".sfam") {
            load_matrix(&path).unwrap();
        } else if name.ends_with(".json") {
            load_model(&path).unwrap();
        }
    }
    assert_eq!(read_labels(first.join(ARCHETYPE_LABELS_FILE)).unwrap().len(), 4);
    let rows = load_matrix(first.join(ARCHETYPES_FILE)).unwrap();
    assert_eq!(rows, read_csv_table(first.join(ARCHETYPES_CSV)).unwrap());

    // Archetypes sit in the outer quarter of the arms.
    let spec: CrossSpec = serde_json::from_str(&fs::read_to_string(dir.join("cross_spec.json")).unwrap()).unwrap();
    for row in rows.row_iter() {
        let r = row.norm();
        assert!(r >= 0.75 * spec.arm_length, "archetype at radius {r}");
    }

    run_ok(&["check", "--model", s(&first.join(MODEL_FILE)), "--archetypes", s(&first.join(ARCHETYPES_CSV))]);
}

#[test]
fn invalid_configs_fail_before_any_output() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("cross");
    copy_dir(&fixtures().join("cross"), &dir);
    let config = dir.join(CROSS_CONFIG_FILE);
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    for (key, value) in [("alpha", serde_json::json!(1.0)), ("beta", serde_json::json!(2.0)), ("k", serde_json::json!(0))] {
        let mut bad = doc.clone();
        bad[key] = value;
        let path = dir.join(format!("bad_{key}.json"));
        fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
        let out_dir = tmp.path().join(format!("out_{key}"));
        let out = starflow(&["fit", "--config", s(&path), "--out", s(&out_dir)]);
        assert_eq!(out.status.code(), Some(2), "{key}");
        assert!(!out_dir.exists());
    }
    doc["surprise"] = serde_json::json!(true);
    let path = dir.join("unknown.json");
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(starflow(&["fit", "--config", s(&path), "--out", s(tmp.path())]).status.code(), Some(2));
}

#[test]
fn labeled_fit_keeps_archetypes_per_class() {
    let tmp = TempDir::new().unwrap();
    let (x, labels) = two_clusters(600, 3);
    let table = DMatrix::from_fn(x.nrows(), 3, |i, j| if j < 2 { x[(i, j)] } else { labels[i] as f64 });
    let data = tmp.path().join("clusters.csv");
    write_csv(&data, &table, Some(&["x0", "x1", "class"])).unwrap();
    let config = tmp.path().join("config.json");
    fs::write(
        &config,
        r#"{"data": "clusters.csv", "label_column": 2, "mode": "labeled", "k": 2, "flow": {"blocks": 1, "hidden": 8}, "train": {"epochs": 5}}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    run_ok(&["fit", "--config", s(&config), "--out", s(&out)]);
    let arch_labels = read_labels(out.join(ARCHETYPE_LABELS_FILE)).unwrap();
    assert_eq!(arch_labels, vec![0, 0, 1, 1]);
    let archetypes = read_csv_table(out.join(ARCHETYPES_CSV)).unwrap();
    assert_eq!(archetypes.nrows(), 4);
    // Each archetype lies nearer its own class mean than the other one.
    let mean = |c: usize| {
        let rows: Vec<usize> = (0..x.nrows()).filter(|&i| labels[i] == c).collect();
        let n = rows.len() as f64;
        [rows.iter().map(|&i| x[(i, 0)]).sum::<f64>() / n, rows.iter().map(|&i| x[(i, 1)]).sum::<f64>() / n]
    };
    let means = [mean(0), mean(1)];
    for (j, &c) in arch_labels.iter().enumerate() {
        let dist = |m: [f64; 2]| ((archetypes[(j, 0)] - m[0]).powi(2) + (archetypes[(j, 1)] - m[1]).powi(2)).sqrt();
        assert!(dist(means[c]) < dist(means[1 - c]), "archetype {j}");
    }
    let point_labels = read_labels(out.join("labels.csv")).unwrap();
    assert_eq!(point_labels, labels);
}
