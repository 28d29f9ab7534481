//! Mode dispatch. Every mode reads its inputs from the validated config and
//! writes its artifacts under `io.out_dir` unless an explicit path is given.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use kplane_core::greens::{greens_constant, kernel_g, rho, weak_identity_default, GreensProfile};
use kplane_core::kplane::io::{read_field, write_field, Field};
use kplane_core::kplane::{backproject, covering_t_grid, filter_k, kplane_transform, DirectionDesign};
use kplane_core::network::{dictionary_matrix, poly_matrix, reg_cost, Atom, Dataset, Model};
use kplane_core::operator::{check_admissibility, inversion_scale};
use kplane_core::oracles::sparsity_certificate;
use kplane_core::polyspace::{PolyCoeffs, PolyCorrector};
use kplane_core::rng::stream;
use kplane_core::solver::{
    kkt_residual, lambda_max, lasso, objective, prune_support, stiefel_violation, train, LassoConfig, Trace,
    TraceRow,
};
use kplane_core::verify::{run_all, CriterionResult, VerifyConfig};
use kplane_core::{Error, UniformGrid};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{Mode, RunConfig};
use crate::ingest::{ingest_csv, ingest_inputs};

/// `(A, t)` of one dictionary atom.
type AtomParams = (DMatrix<f64>, Vec<f64>);

/// What a finished run reports back to `main`.
#[derive(Debug)]
pub struct Outcome {
    /// False only when `verify` ran and a criterion failed.
    pub all_passed: bool,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub objective: f64,
    pub reg_cost: f64,
    pub nnz: usize,
    pub sparsity_bound: i64,
    pub kkt_residual: f64,
    pub lambda: f64,
}

pub fn run(cfg: &RunConfig, mode: Mode) -> Result<Outcome, Error> {
    std::fs::create_dir_all(&cfg.io.out_dir)?;
    match mode {
        Mode::Fit => fit(cfg),
        Mode::Lasso => run_lasso(cfg),
        Mode::Predict => predict(cfg),
        Mode::Prune => prune(cfg),
        Mode::Transform => transform(cfg),
        Mode::Greens => greens(cfg),
        Mode::Verify => verify(cfg),
    }
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.io.out_dir.join(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn write_trace(path: &Path, trace: &Trace) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes the model and checks that it loads back.
fn write_model(path: &Path, model: &Model) -> Result<(), Error> {
    let text = model.to_json();
    if Model::from_json(&text)? != *model {
        return Err(Error::Schema("emitted model does not round-trip".into()));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read model {}: {e}", path.display())))?;
    Model::from_json(&text)
}

fn load_data(cfg: &RunConfig, d: usize) -> Result<Dataset, Error> {
    let data = ingest_csv(cfg.require(&cfg.io.data, "data")?)?;
    if data.dim() != d {
        return Err(Error::Dimension(format!("dataset has {} features, operator has d = {d}", data.dim())));
    }
    Ok(data)
}

/// Outer-weight system `(G, P)` for the atoms of `model` on `data`.
fn outer_system(model: &Model, data: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>), Error> {
    let params: Vec<AtomParams> = model.atoms().iter().map(|a| (a.a.clone(), a.t.clone())).collect();
    let (g, _) = dictionary_matrix(model.spec(), &params, &data.x)?;
    let p = poly_matrix(model.spec().d, model.poly().degree, &data.x);
    Ok((g, p))
}

fn metrics(model: &Model, data: &Dataset, lambda: f64) -> Result<Metrics, Error> {
    let (g, p) = outer_system(model, data)?;
    let v = DVector::from_iterator(model.atoms().len(), model.atoms().iter().map(|a| a.v));
    let c = DVector::from_column_slice(model.poly().values());
    let cert = sparsity_certificate(model, data.len());
    Ok(Metrics {
        objective: objective(model, data, lambda)?,
        reg_cost: reg_cost(model),
        nnz: cert.nnz,
        sparsity_bound: cert.bound,
        kkt_residual: kkt_residual(&g, &p, &data.y, &v, &c, lambda),
        lambda,
    })
}

fn warn_admissibility(cfg: &RunConfig) {
    let report = check_admissibility(&cfg.operator);
    if !report.ok {
        eprintln!("warning: operator is not admissible: {}", report.messages.join("; "));
    }
}

fn fit(cfg: &RunConfig) -> Result<Outcome, Error> {
    warn_admissibility(cfg);
    let data = load_data(cfg, cfg.operator.d)?;
    let trace_path = out(cfg, "trace.csv");
    let (model, trace) = match train(&data, &cfg.operator, &cfg.solver) {
        Ok(pair) => pair,
        Err(failure) => {
            // Keep the partial trace for diagnosis.
            write_trace(&trace_path, &failure.trace)?;
            return Err(failure.error);
        }
    };
    let model_path = out(cfg, "model.json");
    let metrics_path = out(cfg, "metrics.json");
    write_model(&model_path, &model)?;
    write_trace(&trace_path, &trace)?;
    write_json(&metrics_path, &metrics(&model, &data, cfg.solver.lambda)?)?;
    Ok(Outcome { all_passed: true, artifacts: vec![model_path, trace_path, metrics_path] })
}

/// Random atoms: directions from the seeded Stiefel sampler, offsets at the
/// projection of a random data point plus a small jitter.
fn random_dictionary(cfg: &RunConfig, data: &Dataset) -> Result<Vec<AtomParams>, Error> {
    let spec = &cfg.operator;
    let design = DirectionDesign::random(spec.d, spec.k, cfg.lasso.atoms, cfg.seed)?;
    let mut rng = stream(cfg.seed, "cli.lasso.offsets");
    Ok(design
        .matrices()
        .iter()
        .map(|a| {
            let row = data.row(rng.random_range(0..data.len()));
            let t = (0..a.nrows())
                .map(|q| a.row(q).iter().zip(&row).map(|(u, v)| u * v).sum::<f64>() + rng.random_range(-0.1..0.1))
                .collect();
            (a.clone(), t)
        })
        .collect())
}

fn run_lasso(cfg: &RunConfig) -> Result<Outcome, Error> {
    warn_admissibility(cfg);
    let spec = cfg.operator;
    let data = load_data(cfg, spec.d)?;
    let params = random_dictionary(cfg, &data)?;
    let (g, p) = dictionary_matrix(&spec, &params, &data.x)?;
    let lambda = match cfg.lasso.lambda_ratio {
        Some(r) => r * lambda_max(&g, &p, &data.y)?,
        None => cfg.solver.lambda,
    };
    let lasso_cfg = LassoConfig { tol_kkt: cfg.solver.tol_kkt, max_iter: cfg.lasso.max_iter };
    let sol = lasso(&g, &p, &data.y, lambda, &lasso_cfg)?;
    let (v, c) = if cfg.lasso.prune { prune_support(&g, &p, &sol.v, &sol.c, &data.y)? } else { (sol.v.clone(), sol.c.clone()) };
    let atoms = (0..v.len())
        .filter(|&i| v[i] != 0.0)
        .map(|i| Atom { v: v[i], a: params[i].0.clone(), t: params[i].1.clone() })
        .collect();
    let poly = PolyCoeffs::from_values(spec.d, spec.n_l(), c.as_slice().to_vec())?;
    let model = Model::new(spec, atoms, poly, None)?;
    let m = metrics(&model, &data, lambda)?;
    let trace = Trace {
        rows: vec![TraceRow {
            iter: sol.iterations,
            objective: m.objective,
            data_fit: m.objective - lambda * v.lp_norm(1),
            l1: v.lp_norm(1),
            stiefel_violation: params.iter().map(|(a, _)| stiefel_violation(a)).fold(0.0, f64::max),
            step: f64::NAN,
        }],
    };
    let (model_path, trace_path, metrics_path) = (out(cfg, "model.json"), out(cfg, "trace.csv"), out(cfg, "metrics.json"));
    write_model(&model_path, &model)?;
    write_trace(&trace_path, &trace)?;
    write_json(&metrics_path, &m)?;
    Ok(Outcome { all_passed: true, artifacts: vec![model_path, trace_path, metrics_path] })
}

fn predict(cfg: &RunConfig) -> Result<Outcome, Error> {
    let model = load_model(cfg.require(&cfg.io.model, "model")?)?;
    let x = ingest_inputs(cfg.require(&cfg.io.input, "input")?)?;
    if x.ncols() != model.spec().d {
        return Err(Error::Dimension(format!("inputs have {} columns, model has d = {}", x.ncols(), model.spec().d)));
    }
    let y = model.predict(&x)?;
    let path = cfg.io.output.clone().unwrap_or_else(|| out(cfg, "predictions.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Config(e.to_string()))?;
    w.write_record(["y"]).map_err(|e| Error::Config(e.to_string()))?;
    for v in y.iter() {
        w.write_record([format!("{v:e}")]).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush()?;
    Ok(Outcome { all_passed: true, artifacts: vec![path] })
}

/// Reduces a model to at most `M - dim P` atoms with the same predictions
/// on the data and no larger ℓ1 cost.
fn prune(cfg: &RunConfig) -> Result<Outcome, Error> {
    let model = load_model(cfg.require(&cfg.io.model, "model")?)?.merged().without_zero_atoms();
    let data = load_data(cfg, model.spec().d)?;
    let (g, p) = outer_system(&model, &data)?;
    let v = DVector::from_iterator(model.atoms().len(), model.atoms().iter().map(|a| a.v));
    let c = DVector::from_column_slice(model.poly().values());
    let (v2, c2) = prune_support(&g, &p, &v, &c, &data.y)?;
    let atoms = model
        .atoms()
        .iter()
        .zip(v2.iter())
        .filter(|(_, w)| **w != 0.0)
        .map(|(a, w)| Atom { v: *w, ..a.clone() })
        .collect();
    let poly = PolyCoeffs::from_values(model.spec().d, model.poly().degree, c2.as_slice().to_vec())?;
    let pruned = Model::new(*model.spec(), atoms, poly, model.activation_alias())?;
    let cert = sparsity_certificate(&pruned, data.len());
    let m = metrics(&pruned, &data, cfg.solver.lambda)?;
    let model_path = out(cfg, "model_pruned.json");
    let metrics_path = out(cfg, "metrics_pruned.json");
    write_model(&model_path, &pruned)?;
    write_json(
        &metrics_path,
        &json!({"metrics": m, "certificate": {"ok": cert.ok, "nnz": cert.nnz, "bound": cert.bound}}),
    )?;
    Ok(Outcome { all_passed: true, artifacts: vec![model_path, metrics_path] })
}

/// Grid input: forward transform. Plane input: filtered backprojection onto
/// the grid of the `kplane` block.
fn transform(cfg: &RunConfig) -> Result<Outcome, Error> {
    let input = cfg.require(&cfg.io.input, "input")?;
    let field = read_field(&mut BufReader::new(File::open(input)?))?;
    let result = match field {
        Field::Grid(f) => {
            if f.dim() != cfg.operator.d {
                return Err(Error::Dimension(format!("grid has d = {}, operator has d = {}", f.dim(), cfg.operator.d)));
            }
            let design = DirectionDesign::default_for(cfg.operator.d, cfg.operator.k, cfg.kplane.directions)?;
            let t_grid = covering_t_grid(&f.grid, cfg.operator.m(), cfg.kplane.t_refine)?;
            let plane = kplane_transform(&f, &design, &t_grid)?;
            plane.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            Field::Plane(plane)
        }
        Field::Plane(g) => {
            let spec = cfg.operator;
            if (g.design.d(), g.design.k()) != (spec.d, spec.k) {
                return Err(Error::Dimension("plane function does not match operator (d, k)".into()));
            }
            let target = UniformGrid::cube(spec.d, cfg.kplane.extent, cfg.kplane.points_per_axis)?;
            let mut back = backproject(&filter_k(&g, &spec)?, &target)?;
            let scale = inversion_scale(spec.d, spec.k)?;
            back.values.iter_mut().for_each(|v| *v *= scale);
            Field::Grid(back)
        }
    };
    let path = cfg.io.output.clone().unwrap_or_else(|| out(cfg, "transform.bin"));
    let mut w = BufWriter::new(File::create(&path)?);
    write_field(&mut w, &result)?;
    w.flush()?;
    Ok(Outcome { all_passed: true, artifacts: vec![path] })
}

/// Constant, weak-identity residual, and `ρ` with its null-space-corrected
/// kernel `g` along the first axis (`A` the leading rows of the identity,
/// `t = 0`).
fn greens(cfg: &RunConfig) -> Result<Outcome, Error> {
    let spec = cfg.operator;
    let (alpha, m) = (spec.alpha, spec.m());
    let profile = GreensProfile::new(alpha, m)?;
    let (case, constant, log_power) = greens_constant(alpha, m)?;
    let residual = weak_identity_default(&profile)?;
    let summary_path = out(cfg, "greens.json");
    write_json(
        &summary_path,
        &json!({
            "alpha": alpha,
            "m": m,
            "case": format!("{case:?}"),
            "constant": constant,
            "log_power": log_power,
            "weak_identity_residual": residual,
        }),
    )?;
    let profile_path = out(cfg, "greens_profile.csv");
    let mut w = BufWriter::new(File::create(&profile_path)?);
    let corrector = PolyCorrector::build(spec.d, spec.n_l(), &cfg.corrector())?;
    let a = DMatrix::from_fn(m, spec.d, |i, j| if i == j { 1.0 } else { 0.0 });
    let offset = vec![0.0; m];
    writeln!(w, "r,rho,kernel_g")?;
    let n = cfg.kplane.points_per_axis;
    for i in 0..=n {
        let r = cfg.kplane.extent * i as f64 / n as f64;
        let mut x = vec![0.0; spec.d];
        x[0] = r;
        let g = kernel_g(&spec, &a, &offset, &x, &corrector)?;
        writeln!(w, "{r:e},{:e},{g:e}", rho(&profile, &x[..m]))?;
    }
    w.flush()?;
    Ok(Outcome { all_passed: true, artifacts: vec![summary_path, profile_path] })
}

fn verify(cfg: &RunConfig) -> Result<Outcome, Error> {
    let results = run_all(&VerifyConfig { seed: cfg.seed });
    for r in &results {
        eprintln!("{}", r.line());
    }
    let all_passed = results.iter().all(|r| r.passed);
    let report_path = out(cfg, "report.json");
    write_json(&report_path, &json!({"passed": all_passed, "seed": cfg.seed, "criteria": results}))?;
    let mut artifacts = vec![report_path];
    artifacts.extend(plot_csvs(cfg, &results)?);
    Ok(Outcome { all_passed, artifacts })
}

/// Plot-ready series pulled from the criterion details.
fn plot_csvs(cfg: &RunConfig, results: &[CriterionResult]) -> Result<Vec<PathBuf>, Error> {
    let mut paths = Vec::new();
    let find = |name: &str| results.iter().find(|r| r.name == name).map(|r| &r.details);
    if let Some(series) = find("fbp_identity").and_then(|d| d["series"].as_array()) {
        let path = out(cfg, "fbp_residual_vs_directions.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "directions,residual")?;
        for row in series {
            writeln!(w, "{},{:e}", row["directions"], row["residual"].as_f64().unwrap_or(f64::NAN))?;
        }
        w.flush()?;
        paths.push(path);
    }
    if let Some(pairs) = find("greens_weak_identity").and_then(|d| d["pairs"].as_array()) {
        let path = out(cfg, "weak_identity_refinement.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "alpha,m,residual,residual_doubled")?;
        for row in pairs {
            let f = |k: &str| row[k].as_f64().unwrap_or(f64::NAN);
            writeln!(w, "{},{},{:e},{:e}", f("alpha"), row["m"], f("residual"), f("residual_doubled"))?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
