use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use affrank::dataset::{save_csv, Dataset, ScoredSample};
use affrank::loss::read_surface_rows;
use affrank::nn::{Activation, Network};
use affrank::trainer::{save_trained, TrainConfig, TrainedModel};

fn affrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affrank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = affrank(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset: 12 groups of 10 samples, 4 features.
fn small_dataset(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    ok(&[
        "generate",
        "--out-dir",
        s(&out),
        "--n-groups",
        "12",
        "--samples-per-group",
        "10",
        "--feature-dim",
        "4",
        "--seed",
        "3",
    ]);
    out.join("dataset.csv")
}

const QUICK: [&str; 8] = [
    "--hidden",
    "8",
    "--max-epochs",
    "4",
    "--patience",
    "2",
    "--train-fraction",
    "0.4",
];

#[test]
fn generate_writes_header_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["generate", "--out-dir", s(&a), "--seed", "1"]);
    ok(&["generate", "--out-dir", s(&b), "--seed", "1"]);
    let text = fs::read_to_string(a.join("dataset.csv")).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("id,group,score,f0,f1,"));
    assert_eq!(text.lines().count(), 2 + 120 * 20);
    assert_eq!(
        fs::read(a.join("dataset.csv")).unwrap(),
        fs::read(b.join("dataset.csv")).unwrap()
    );
    assert!(text.starts_with("# manifest: generate.manifest.json\n"));
}

#[test]
fn generate_replays_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&[
        "generate",
        "--out-dir",
        s(&first),
        "--noise-sd",
        "0",
        "--n-groups",
        "5",
        "--seed",
        "8",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("generate.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    let mut conf = String::new();
    for (k, v) in manifest["config"].as_object().unwrap() {
        if k != "out-dir" {
            conf += &format!("{k}={}\n", v.as_str().unwrap());
        }
    }
    let conf_path = dir.path().join("replay.conf");
    fs::write(&conf_path, conf).unwrap();
    let second = dir.path().join("second");
    ok(&["generate", "--config", s(&conf_path), "--out-dir", s(&second)]);
    assert_eq!(
        fs::read(first.join("dataset.csv")).unwrap(),
        fs::read(second.join("dataset.csv")).unwrap()
    );
}

#[test]
fn lambda_one_and_plain_write_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let plain = dir.path().join("plain");
    let lupi = dir.path().join("lupi");
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--variant",
        "plain",
        "--out-dir",
        s(&plain),
    ];
    args.extend(QUICK);
    ok(&args);
    let mut args = vec!["train", "--data", s(&data), "--lambda", "1.0", "--out-dir", s(&lupi)];
    args.extend(QUICK);
    ok(&args);
    assert_eq!(
        fs::read(plain.join("model.txt")).unwrap(),
        fs::read(lupi.join("model.txt")).unwrap()
    );
    assert_eq!(
        fs::read(plain.join("split.json")).unwrap(),
        fs::read(lupi.join("split.json")).unwrap()
    );
}

#[test]
fn missing_dataset_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("does-not-exist.csv");
    let out = affrank(&["train", "--data", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does-not-exist.csv"));
}

#[test]
fn usage_errors_exit_with_input_code() {
    assert_eq!(affrank(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(affrank(&["surface", "--panel", "wobbly"]).status.code(), Some(2));
    assert_eq!(affrank(&["surface", "--hx-step", "0"]).status.code(), Some(2));
}

#[test]
fn one_epoch_gives_history_of_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("m");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out-dir",
        s(&out),
        "--hidden",
        "8",
        "--max-epochs",
        "1",
        "--patience",
        "1",
        "--train-fraction",
        "0.4",
    ]);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(sidecar["history"].as_array().unwrap().len(), 1);
    assert_eq!(sidecar["stopped_epoch"], 1);
    assert_eq!(sidecar["manifest"], "train.manifest.json");
}

/// Dataset whose first feature equals the score, plus a one-layer model
/// with the given weight on that feature.
fn scorer_fixture(dir: &Path, weight: f64) -> (PathBuf, PathBuf) {
    let samples = (0..9)
        .map(|k| ScoredSample {
            id: k,
            group: format!("g{}", k % 3),
            score: k as f64 - 4.0,
            features: vec![k as f64 - 4.0, 0.5],
        })
        .collect();
    let data = dir.join("fixture.csv");
    save_csv(&Dataset::new(samples).unwrap(), &data, None).unwrap();
    let network = Network::from_parts(&[2, 1], Activation::Relu, vec![vec![weight, 0.0]], vec![vec![1.0]]).unwrap();
    let model = TrainedModel {
        network,
        history: vec![],
        stopped_epoch: 0,
        best_epoch: 0,
        best_validation_loss: 0.0,
        config: TrainConfig::default(),
    };
    let model_path = dir.join("fixture-model.txt");
    save_trained(&model, &model_path, None).unwrap();
    (data, model_path)
}

#[test]
fn eval_perfect_scorer_and_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = scorer_fixture(dir.path(), 1.0);
    let stdout = ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(stdout.contains("r=1.000 tau=1.000"), "{stdout}");

    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let row: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .nth(1)
        .unwrap()
        .split(',')
        .collect();
    let r: f64 = row[2].parse().unwrap();
    let tau: f64 = row[3].parse().unwrap();
    assert!(
        stdout.contains(&format!("r={r:.3} tau={tau:.3} n={}", row[1])),
        "{stdout} vs {csv}"
    );
}

#[test]
fn eval_constant_scorer_reports_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = scorer_fixture(dir.path(), 0.0);
    let stdout = ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(
        stdout.contains("r=0.000 (degenerate) tau=0.000 (degenerate)"),
        "{stdout}"
    );
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.contains(",true,true\n"));
}

#[test]
fn eval_dimension_mismatch_names_both_dims() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = scorer_fixture(dir.path(), 1.0);
    let data = small_dataset(dir.path());
    let out = affrank(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('2') && err.contains('4'), "{err}");
}

#[test]
fn train_then_eval_on_saved_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("m");
    let mut args = vec!["train", "--data", s(&data), "--out-dir", s(&out), "--lambda", "0.5"];
    args.extend(QUICK);
    ok(&args);
    let model = out.join("model.txt");
    let split = out.join("split.json");
    let stdout = ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--split",
        s(&split),
        "--partition",
        "test",
        "--out-dir",
        s(&out),
    ]);
    assert!(stdout.starts_with("r="), "{stdout}");
    // retraining on the saved split reproduces the model exactly
    let again = dir.path().join("again");
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--out-dir",
        s(&again),
        "--lambda",
        "0.5",
        "--split",
        s(&split),
    ];
    args.extend(QUICK);
    ok(&args);
    assert_eq!(fs::read(&model).unwrap(), fs::read(again.join("model.txt")).unwrap());
}

fn experiment(dir: &Path, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "experiment",
        "--data",
        s(data),
        "--out-dir",
        s(&out),
        "--folds",
        "2",
        "--fractions",
        "0.4",
        "--lambdas",
        "0.5",
        "--hidden",
        "8",
        "--max-epochs",
        "4",
        "--patience",
        "2",
        "--quiet",
    ];
    args.extend(extra);
    ok(&args);
    out
}

#[test]
fn experiment_grid_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let a = experiment(dir.path(), &data, "a", &[]);
    let b = experiment(dir.path(), &data, "b", &["--jobs", "2"]);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let methods = report["summaries"][0]["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 2);
    assert!(methods.iter().all(|m| m["n_folds"] == 2));
    assert_eq!(report["cells"].as_array().unwrap().len(), 4);
    assert_eq!(report["manifest"], "experiment.manifest.json");

    let table = fs::read_to_string(a.join("table_kendall.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "method,lambda,0.4");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("RankNet,,"));
    assert!(rows[2].starts_with("AffRankNet+ lambda=0.5,0.5,"));

    for f in [
        "table_pearson.csv",
        "table_kendall.csv",
        "summary.csv",
        "significance.csv",
        "folds.csv",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "hidden=8\nmax_epochs=3\npatience=2\ntrain-fraction=0.4\n").unwrap();
    let from_file = dir.path().join("f");
    ok(&[
        "train",
        "--config",
        s(&conf),
        "--data",
        s(&data),
        "--out-dir",
        s(&from_file),
    ]);
    let flagged = dir.path().join("g");
    ok(&[
        "train",
        "--config",
        s(&conf),
        "--data",
        s(&data),
        "--out-dir",
        s(&flagged),
        "--max-epochs",
        "2",
    ]);
    let read = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(p.join("train.manifest.json")).unwrap()).unwrap()
    };
    assert_eq!(read(&from_file)["config"]["max-epochs"], "3");
    assert_eq!(read(&flagged)["config"]["max-epochs"], "2");
    assert_eq!(read(&flagged)["config"]["hidden"], "8");
    assert_eq!(read(&flagged)["config"]["lr"], "0.001");

    fs::write(&conf, "no_such_key=1\n").unwrap();
    let out = affrank(&["train", "--config", s(&conf), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
}

fn surface_rows(path: &Path) -> Vec<(f64, f64, f64)> {
    read_surface_rows(std::io::BufReader::new(fs::File::open(path).unwrap())).unwrap()
}

#[test]
fn surface_defaults_and_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["surface", "--out-dir", s(&raw)]);
    let privileged = surface_rows(&raw.join("surface_privileged.csv"));
    assert_eq!(privileged.len(), 101 * 101);
    let at_anchor = privileged.iter().find(|(x, y, _)| *x == 8.0 && *y == 4.0).unwrap();
    assert!(at_anchor.2.abs() < 1e-12);

    let panels: Vec<Vec<f64>> = ["plain", "lupi", "privileged"]
        .iter()
        .map(|p| {
            surface_rows(&raw.join(format!("surface_{p}.csv")))
                .into_iter()
                .map(|r| r.2)
                .collect()
        })
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let differ = panels[i].iter().zip(&panels[j]).filter(|(a, b)| a != b).count();
            assert!(
                differ * 2 > panels[i].len(),
                "panels {i} and {j} differ on {differ} cells"
            );
        }
    }

    let norm = dir.path().join("norm");
    ok(&["surface", "--out-dir", s(&norm), "--normalize", "--panel", "lupi"]);
    let values: Vec<f64> = surface_rows(&norm.join("surface_lupi.csv"))
        .into_iter()
        .map(|r| r.2)
        .collect();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((min, max), (0.0, 1.0));
    assert!(!norm.join("surface_plain.csv").exists());
}
