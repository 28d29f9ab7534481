use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kplane_core::grid::{GridFunction, UniformGrid};
use kplane_core::kplane::io::{read_field, write_field, Field};
use kplane_core::network::Model;
use kplane_core::verify::sparsity_instance;
use serde_json::Value;

fn kplane(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kplane"))
        .args(args)
        .arg(format!("--io.out_dir={}", dir.display()))
        .env_remove("KPLANE_CONFIG")
        .output()
        .expect("binary runs")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_envelope(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {stderr}"))
}

fn write_1d_data(path: &Path) {
    let mut text = String::from("x,y\n");
    for i in 0..15 {
        let x = -1.0 + 2.0 * i as f64 / 14.0;
        text.push_str(&format!("{x},{}\n", (3.0 * x).sin()));
    }
    fs::write(path, text).unwrap();
}

const FIT_ARGS: [&str; 4] = ["--solver.lambda=0.05", "--solver.width=8", "--solver.max_iter=2000", "--seed=3"];

#[test]
fn fit_predict_prune_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_1d_data(&data);
    let data_arg = format!("--io.data={}", data.display());

    let mut args = vec!["fit", data_arg.as_str()];
    args.extend(FIT_ARGS);
    let out = kplane(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = json_file(&dir.path().join("metrics.json"));
    for key in ["objective", "reg_cost", "nnz", "sparsity_bound", "kkt_residual"] {
        assert!(metrics.get(key).is_some(), "metrics lack {key}");
    }
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,objective"));
    let model_path = dir.path().join("model.json");
    let model = Model::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();

    // Same seed, different thread count: identical metrics.
    let rerun = tempfile::tempdir().unwrap();
    let mut args2 = args.clone();
    args2.push("--threads=3");
    assert!(kplane(rerun.path(), &args2).status.success());
    assert_eq!(fs::read(dir.path().join("metrics.json")).unwrap(), fs::read(rerun.path().join("metrics.json")).unwrap());

    let inputs = dir.path().join("inputs.csv");
    fs::write(&inputs, "x\n-0.5\n0\n0.25\n").unwrap();
    let preds = dir.path().join("preds.csv");
    let out = kplane(
        dir.path(),
        &[
            "predict",
            &format!("--io.model={}", model_path.display()),
            &format!("--io.input={}", inputs.display()),
            &format!("--io.output={}", preds.display()),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<f64> = fs::read_to_string(&preds).unwrap().lines().skip(1).map(|l| l.parse().unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for (x, y) in [-0.5, 0.0, 0.25].iter().zip(&lines) {
        assert_eq!(*y, model.forward(&[*x]).unwrap());
    }

    let out = kplane(dir.path(), &["prune", &format!("--io.model={}", model_path.display()), &data_arg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pruned = json_file(&dir.path().join("metrics_pruned.json"));
    assert_eq!(pruned["certificate"]["ok"], Value::Bool(true));
    assert!(pruned["metrics"]["reg_cost"].as_f64().unwrap() <= metrics["reg_cost"].as_f64().unwrap() + 1e-10);
    Model::from_json(&fs::read_to_string(dir.path().join("model_pruned.json")).unwrap()).unwrap();
}

#[test]
fn lasso_then_prune_certifies_on_acceptance_instance() {
    let dir = tempfile::tempdir().unwrap();
    let inst = sparsity_instance(0).unwrap();
    let mut text = String::new();
    for i in 0..inst.data.len() {
        text.push_str(&format!("{},{},{}\n", inst.data.x[(i, 0)], inst.data.x[(i, 1)], inst.data.y[i]));
    }
    let data = dir.path().join("data.csv");
    fs::write(&data, text).unwrap();
    let data_arg = format!("--io.data={}", data.display());
    let spec_args = ["--operator.d=2", "--operator.k=1", "--operator.alpha=2"];

    let mut args = vec!["lasso", data_arg.as_str(), "--lasso.lambda_ratio=0.1", "--lasso.prune=false"];
    args.extend(spec_args);
    let out = kplane(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = json_file(&dir.path().join("metrics.json"));
    assert!(metrics["kkt_residual"].as_f64().unwrap() <= 1e-8);

    let model_arg = format!("--io.model={}", dir.path().join("model.json").display());
    let mut args = vec!["prune", model_arg.as_str(), data_arg.as_str()];
    args.extend(spec_args);
    let out = kplane(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pruned = json_file(&dir.path().join("metrics_pruned.json"));
    assert_eq!(pruned["certificate"]["ok"], Value::Bool(true));
    assert!(pruned["certificate"]["nnz"].as_u64().unwrap() <= 7);
}

#[test]
fn errors_come_back_as_json_envelopes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,y\n0,1\nabc,2\n").unwrap();
    let out = kplane(dir.path(), &["fit", &format!("--io.data={}", bad.display())]);
    assert_eq!(out.status.code(), Some(2));
    let env = error_envelope(&out);
    assert_eq!(env["error"]["code"], "parse");
    assert!(env["error"]["message"].as_str().unwrap().contains("line 3"));

    let out = kplane(dir.path(), &["fit", "--solver.nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_envelope(&out)["error"]["code"], "schema");

    let out = kplane(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_envelope(&out)["error"]["code"], "config");

    let out = kplane(dir.path(), &["fit"]);
    assert_eq!(error_envelope(&out)["error"]["code"], "config");
}

#[test]
fn config_path_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, format!(r#"{{"mode": "greens", "io": {{"out_dir": {:?}}}}}"#, dir.path().display().to_string()))
        .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kplane")).env("KPLANE_CONFIG", &cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json_file(&dir.path().join("greens.json"));
    assert_eq!(summary["constant"].as_f64().unwrap(), -0.5);
    assert!(summary["weak_identity_residual"].as_f64().unwrap() <= 1e-3);
    let profile = fs::read_to_string(dir.path().join("greens_profile.csv")).unwrap();
    let first: Vec<f64> = profile.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[1], 0.0);
}

#[test]
fn transform_round_trip_recovers_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let grid = UniformGrid::cube(2, 8.0, 128).unwrap();
    let phi = GridFunction::from_fn(grid, |x| (-((x[0] - 0.5).powi(2) + x[1] * x[1]) / 2.0).exp());
    let input = dir.path().join("phi.bin");
    write_field(&mut fs::File::create(&input).unwrap(), &Field::Grid(phi.clone())).unwrap();
    let plane = dir.path().join("plane.bin");
    let back = dir.path().join("back.bin");
    let common = ["--operator.d=2", "--operator.k=1", "--kplane.extent=8", "--kplane.points_per_axis=128"];
    for (from, to) in [(&input, &plane), (&plane, &back)] {
        let mut args = vec!["transform".to_string(), format!("--io.input={}", from.display()), format!("--io.output={}", to.display())];
        args.extend(common.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = kplane(dir.path(), &refs);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let Field::Grid(recon) = read_field(&mut std::io::BufReader::new(fs::File::open(&back).unwrap())).unwrap() else {
        panic!("expected a grid");
    };
    let mask = phi.grid.central_mask();
    let err = recon
        .values
        .iter()
        .zip(&phi.values)
        .zip(mask)
        .filter(|(_, inside)| *inside)
        .map(|((r, p), _)| (r - p).abs())
        .fold(0.0, f64::max);
    assert!(err <= 2e-2, "round-trip error {err:e}");
}

#[test]
fn verify_writes_report_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = kplane(dir.path(), &["verify"]);
    let report = json_file(&dir.path().join("report.json"));
    let criteria = report["criteria"].as_array().unwrap();
    assert_eq!(criteria.len(), 10);
    let all = criteria.iter().all(|c| c["passed"] == Value::Bool(true));
    assert_eq!(report["passed"], Value::Bool(all));
    assert_eq!(out.status.code(), Some(if all { 0 } else { 1 }));
    let fbp = fs::read_to_string(dir.path().join("fbp_residual_vs_directions.csv")).unwrap();
    assert_eq!(fbp.lines().count(), 5);
    assert!(dir.path().join("weak_identity_refinement.csv").exists());
}
