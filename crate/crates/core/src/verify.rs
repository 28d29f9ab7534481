//! The acceptance checks, shared by `kplane verify` and the acceptance test
//! target. Each check returns its headline value, the threshold it is held
//! to, the wall time, and a JSON object of supporting numbers.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;
use crate::greens::{greens_constant, rho, weak_identity_with, GreensProfile, WeakIdentityConfig};
use crate::grid::{GridFunction, UniformGrid};
use crate::kplane::{
    covering_t_grid, default_u_samples, fbp_identity_residual, fourier_slice_residual, kplane_transform,
    project_iso, DirectionDesign, PlaneFunction,
};
use crate::network::{dictionary_matrix, reg_cost, Atom, Dataset, Model};
use crate::operator::{backprojection_constant, sphere_area, OperatorSpec};
use crate::oracles::{grid_knot_optimum_1d, padded_knots, polyharmonic_interpolate, sparsity_certificate};
use crate::polyspace::{enumerate_multi_indices, monomial_eval, project_poly, CorrectorConfig, PolyCoeffs, PolyCorrector};
use crate::rng::stream;
use crate::solver::{lambda_max, lasso, prune_support, train, FitConfig, LassoConfig, Trace};
use crate::stiefel::stiefel_project;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub elapsed_s: f64,
    pub budget_s: f64,
    pub details: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CriterionResult {
    /// One human-readable status line.
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!(
            "[{status}] {:>2} {:<22} value={:.3e} threshold={:e} time={:.2}s/{:.0}s",
            self.id, self.name, self.value, self.threshold, self.elapsed_s, self.budget_s
        );
        if let Some(e) = &self.error {
            s.push_str(&format!(" error: {e}"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VerifyConfig {
    pub seed: u64,
}

struct Outcome {
    passed: bool,
    value: f64,
    threshold: f64,
    details: Value,
}

fn timed(id: u8, name: &'static str, budget_s: f64, f: impl FnOnce() -> Result<Outcome>) -> CriterionResult {
    let start = Instant::now();
    let out = f();
    let elapsed_s = start.elapsed().as_secs_f64();
    match out {
        Ok(o) => CriterionResult {
            id,
            name,
            passed: o.passed && elapsed_s <= budget_s,
            value: o.value,
            threshold: o.threshold,
            elapsed_s,
            budget_s,
            details: o.details,
            error: None,
        },
        Err(e) => CriterionResult {
            id,
            name,
            passed: false,
            value: f64::NAN,
            threshold: f64::NAN,
            elapsed_s,
            budget_s,
            details: Value::Null,
            error: Some(format!("{} ({})", e, e.code())),
        },
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn gaussian(grid: UniformGrid, center: &[f64]) -> GridFunction {
    let c = center.to_vec();
    GridFunction::from_fn(grid, move |x| (-x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0).exp())
}

/// Closed-form constants against literal values.
pub fn constants(_: &VerifyConfig) -> CriterionResult {
    timed(1, "constants", 1.0, || {
        let checks = [
            ("c_2_1", backprojection_constant(2, 1)?, 1.0 / (4.0 * PI)),
            ("c_3_2", backprojection_constant(3, 2)?, 1.0 / (8.0 * PI * PI)),
            ("A_3_2", greens_constant(3.0, 2)?.1, -1.0 / (2.0 * PI)),
            ("B_1_2", greens_constant(4.0, 2)?.1, 1.0 / (8.0 * PI)),
            ("sphere_S2", sphere_area(3)?, 4.0 * PI),
        ];
        let worst = checks.iter().map(|(_, got, want)| rel(*got, *want)).fold(0.0, f64::max);
        let details: serde_json::Map<String, Value> =
            checks.iter().map(|(n, got, want)| (n.to_string(), json!({"value": got, "reference": want}))).collect();
        Ok(Outcome { passed: worst <= 1e-12, value: worst, threshold: 1e-12, details: Value::Object(details) })
    })
}

/// The distributional identity `⟨ρ, Lφ⟩ = φ(0)` and its refinement.
pub fn greens_weak_identity(_: &VerifyConfig) -> CriterionResult {
    timed(2, "greens_weak_identity", 30.0, || {
        let mut worst = 0.0f64;
        let mut refines = true;
        let mut rows = Vec::new();
        for (alpha, m) in [(2.0, 1), (3.0, 1), (4.0, 2), (3.0, 2)] {
            let profile = GreensProfile::new(alpha, m)?;
            let cfg = WeakIdentityConfig::default_for(&profile);
            let coarse = weak_identity_with(&profile, &cfg)?;
            let fine = weak_identity_with(
                &profile,
                &WeakIdentityConfig { points_per_axis: 2 * cfg.points_per_axis, ..cfg },
            )?;
            worst = worst.max(coarse);
            refines &= fine < coarse;
            rows.push(json!({"alpha": alpha, "m": m, "residual": coarse, "residual_doubled": fine}));
        }
        Ok(Outcome {
            passed: worst <= 1e-3 && refines,
            value: worst,
            threshold: 1e-3,
            details: json!({"pairs": rows, "refinement_decreases": refines}),
        })
    })
}

/// Fourier transform of a slice against the restricted Fourier transform.
pub fn fourier_slice(_: &VerifyConfig) -> CriterionResult {
    timed(3, "fourier_slice", 60.0, || {
        let phi2 = gaussian(UniformGrid::cube(2, 6.5, 256)?, &[0.0, 0.0]);
        let r2 = fourier_slice_residual(&phi2, &DMatrix::from_row_slice(1, 2, &[0.6, 0.8]))?;
        let phi3 = gaussian(UniformGrid::cube(3, 6.5, 96)?, &[0.0, 0.0, 0.0]);
        let r3 = fourier_slice_residual(&phi3, &DMatrix::from_row_slice(1, 3, &[2.0 / 7.0, 3.0 / 7.0, 6.0 / 7.0]))?;
        // Report the tighter of the two margins as the headline.
        let passed = r2 <= 1e-3 && r3 <= 5e-3;
        let (value, threshold) = if r2 / 1e-3 >= r3 / 5e-3 { (r2, 1e-3) } else { (r3, 5e-3) };
        Ok(Outcome {
            passed,
            value,
            threshold,
            details: json!({"d2_k1_256": {"residual": r2, "threshold": 1e-3}, "d3_k2_96": {"residual": r3, "threshold": 5e-3}}),
        })
    })
}

/// Direction counts reported by [`filtered_backprojection_identity`].
pub const FBP_DIRECTION_COUNTS: [usize; 4] = [45, 90, 180, 360];

/// `vol · R* K R φ = φ` on the central region, its decrease with more
/// directions, and the exact `k = 0` case.
pub fn filtered_backprojection_identity(_: &VerifyConfig) -> CriterionResult {
    timed(4, "fbp_identity", 60.0, || {
        let grid = UniformGrid::cube(2, 8.0, 256)?;
        let phi = gaussian(grid.clone(), &[1.5, -1.0]);
        let spec = OperatorSpec::fractional_laplacian(2.0, 2, 1)?;
        let t_grid = covering_t_grid(&grid, 1, 1)?;
        let mut series = Vec::new();
        for n in FBP_DIRECTION_COUNTS {
            let design = DirectionDesign::half_circle(n)?;
            series.push((n, fbp_identity_residual(&phi, &spec, &design, &t_grid)?));
        }
        let at = |n: usize| series.iter().find(|(m, _)| *m == n).map(|p| p.1).unwrap_or(f64::NAN);
        let (r180, r360) = (at(180), at(360));
        let spec0 = OperatorSpec::fractional_laplacian(3.0, 2, 0)?;
        let grid0 = UniformGrid::cube(2, 3.0, 31)?;
        let r0 = fbp_identity_residual(
            &gaussian(grid0.clone(), &[0.4, 0.1]),
            &spec0,
            &DirectionDesign::signed_permutations(2)?,
            &grid0,
        )?;
        Ok(Outcome {
            passed: r180 <= 2e-2 && r360 < r180 && r0 <= 1e-12,
            value: r180,
            threshold: 2e-2,
            details: json!({
                "series": series.iter().map(|(n, r)| json!({"directions": n, "residual": r})).collect::<Vec<_>>(),
                "strictly_decreasing_180_to_360": r360 < r180,
                "k0_residual": r0,
            }),
        })
    })
}

/// Biorthogonality of the dual basis and polynomial reproduction.
pub fn biorthogonality(cfg: &VerifyConfig) -> CriterionResult {
    timed(5, "biorthogonality", 30.0, || {
        let mut rng = stream(cfg.seed, "verify.biorthogonality");
        let mut worst_gram = 0.0f64;
        let mut worst_repro = 0.0f64;
        let mut rows = Vec::new();
        for (d, max_n) in [(1usize, 3i64), (2, 2)] {
            for n_l in 0..=max_n {
                let corrector = PolyCorrector::build(d, n_l, &CorrectorConfig::default_for(d))?;
                let gram = corrector.gram();
                let dev = (gram - DMatrix::identity(corrector.indices().len(), corrector.indices().len())).amax();
                let indices = enumerate_multi_indices(d, n_l);
                let coeffs: Vec<f64> = indices.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                let poly = PolyCoeffs::from_values(d, n_l, coeffs.clone())?;
                let f = GridFunction::from_fn(corrector.grid().clone(), |x| {
                    indices.iter().zip(&coeffs).map(|(n, c)| c * monomial_eval(n, x)).sum()
                });
                let back = project_poly(&corrector, &f)?;
                let repro = back.values().iter().zip(poly.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst_gram = worst_gram.max(dev);
                worst_repro = worst_repro.max(repro);
                rows.push(json!({"d": d, "n_l": n_l, "gram_deviation": dev, "reproduction_error": repro}));
            }
        }
        let value = worst_gram.max(worst_repro);
        Ok(Outcome { passed: value <= 1e-6, value, threshold: 1e-6, details: json!({"cases": rows}) })
    })
}

/// Seeded instance of the representer-sparsity check.
pub struct SparsityInstance {
    pub spec: OperatorSpec,
    pub data: Dataset,
    pub params: Vec<(DMatrix<f64>, Vec<f64>)>,
}

pub fn sparsity_instance(seed: u64) -> Result<SparsityInstance> {
    let spec = OperatorSpec::fractional_laplacian(2.0, 2, 1)?;
    let mut rng = stream(seed, "verify.sparsity.data");
    let x = DMatrix::<f64>::from_fn(10, 2, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(10, |i, _| {
        (2.0 * x[(i, 0)]).sin() + x[(i, 1)] * x[(i, 1)] + 0.1 * rng.sample::<f64, _>(StandardNormal)
    });
    let mut rng = stream(seed, "verify.sparsity.dictionary");
    let params = (0..500)
        .map(|_| {
            let theta = rng.random_range(0.0..2.0 * PI);
            let a = DMatrix::from_row_slice(1, 2, &[theta.cos(), theta.sin()]);
            (a, vec![rng.random_range(-1.5..1.5)])
        })
        .collect();
    Ok(SparsityInstance { spec, data: Dataset::new(x, y)?, params })
}

/// Lasso over a 500-atom dictionary followed by support pruning.
pub fn representer_sparsity(cfg: &VerifyConfig) -> CriterionResult {
    timed(6, "representer_sparsity", 10.0, || {
        let inst = sparsity_instance(cfg.seed)?;
        let (g, p) = dictionary_matrix(&inst.spec, &inst.params, &inst.data.x)?;
        let y = &inst.data.y;
        let lambda = 0.1 * lambda_max(&g, &p, y)?;
        let sol = lasso(&g, &p, y, lambda, &LassoConfig::default())?;
        let (v, c) = prune_support(&g, &p, &sol.v, &sol.c, y)?;
        let before = &g * &sol.v + &p * &sol.c;
        let after = &g * &v + &p * &c;
        let drift = (&after - &before).amax();
        let (l1_before, l1_after) = (sol.v.lp_norm(1), v.lp_norm(1));
        let atoms: Vec<Atom> = (0..v.len())
            .filter(|&i| v[i] != 0.0)
            .map(|i| Atom { v: v[i], a: inst.params[i].0.clone(), t: inst.params[i].1.clone() })
            .collect();
        let model = Model::new(inst.spec, atoms, PolyCoeffs::from_values(2, 1, c.as_slice().to_vec())?, None)?;
        let cert = sparsity_certificate(&model, inst.data.len());
        let cost = reg_cost(&model);
        let cost_exact = cost == model.atoms().iter().map(|a| a.v.abs()).sum::<f64>();
        let l1_ok = l1_after <= l1_before + 1e-10;
        Ok(Outcome {
            passed: cert.ok && cert.nnz <= 7 && drift <= 1e-8 && l1_ok && sol.kkt_residual <= 1e-8 && cost_exact,
            value: cert.nnz as f64,
            threshold: 7.0,
            details: json!({
                "lambda": lambda,
                "nnz_lasso": sol.v.iter().filter(|x| **x != 0.0).count(),
                "nnz": cert.nnz,
                "bound": cert.bound,
                "prediction_drift": drift,
                "l1_before": l1_before,
                "l1_after": l1_after,
                "kkt_residual": sol.kkt_residual,
                "reg_cost": cost,
                "reg_cost_equals_l1": cost_exact,
            }),
        })
    })
}

/// `ρ(Ax - t) = ρ(x - Aᵀt)` for orthogonal `A` and the thin-plate oracle.
pub fn k0_reduction(cfg: &VerifyConfig) -> CriterionResult {
    timed(7, "k0_reduction", 5.0, || {
        let profile = GreensProfile::new(4.0, 2)?;
        let mut rng = stream(cfg.seed, "verify.k0");
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let g = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = stiefel_project(&g, &mut rng)?;
            let t = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let lhs = rho(&profile, (&a * &x - &t).as_slice());
            let rhs = rho(&profile, (&x - a.transpose() * &t).as_slice());
            worst = worst.max((lhs - rhs).abs());
        }
        let x = DMatrix::<f64>::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(20, |i, _| (x[(i, 0)] * 3.0).cos() * x[(i, 1)].exp());
        let interp = polyharmonic_interpolate(&x, &y, 4.0, None)?;
        let (interp_res, side_res) = interp.residuals(&y);
        let interp_rel = interp_res / y.amax();
        Ok(Outcome {
            passed: worst <= 1e-12 && interp_rel <= 1e-8 && side_res <= 1e-8,
            value: worst,
            threshold: 1e-12,
            details: json!({
                "identity_max_error": worst,
                "interpolation_residual": interp_rel,
                "side_condition_residual": side_res,
            }),
        })
    })
}

/// Seeded univariate data shared by the trainer checks.
pub fn univariate_dataset(seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, "verify.univariate");
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
    Dataset::new(DMatrix::from_column_slice(8, 1, &x), DVector::from_vec(y))
}

/// Trainer settings of the univariate checks.
pub fn univariate_fit_config(seed: u64) -> FitConfig {
    FitConfig { lambda: 0.05, width: 32, seed, ..FitConfig::default() }
}

fn univariate_run(seed: u64) -> Result<(Dataset, Model, Trace)> {
    let data = univariate_dataset(seed)?;
    let spec = OperatorSpec::fractional_laplacian(2.0, 1, 0)?;
    let (model, trace) = train(&data, &spec, &univariate_fit_config(seed))?;
    Ok((data, model, trace))
}

/// Trainer objective against the 1000-knot grid optimum.
pub fn univariate_consistency(cfg: &VerifyConfig) -> CriterionResult {
    timed(8, "univariate_consistency", 60.0, || {
        let (data, model, trace) = univariate_run(cfg.seed)?;
        let x: Vec<f64> = data.x.column(0).iter().copied().collect();
        let y: Vec<f64> = data.y.iter().copied().collect();
        let knots = padded_knots(&x, 1000)?;
        let grid = grid_knot_optimum_1d(&x, &y, 2.0, 0.05, &knots)?;
        let trained = trace.final_objective().unwrap_or(f64::NAN);
        let ratio = trained / grid.objective;
        Ok(Outcome {
            passed: ratio <= 1.01,
            value: ratio,
            threshold: 1.01,
            details: json!({
                "trainer_objective": trained,
                "grid_optimum": grid.objective,
                "grid_kkt_residual": grid.kkt_residual,
                "iterations": trace.rows.len() - 1,
                "atoms": model.atoms().len(),
            }),
        })
    })
}

/// Stiefel feasibility and monotone objective along the trainer trace.
pub fn trainer_invariants(cfg: &VerifyConfig) -> CriterionResult {
    timed(9, "trainer_invariants", 60.0, || {
        let (_, _, trace) = univariate_run(cfg.seed)?;
        let stiefel = trace.max_stiefel_violation();
        let increase = trace.max_increase();
        let monotone = trace.is_monotone(1e-12);
        Ok(Outcome {
            passed: stiefel <= 1e-10 && monotone,
            value: stiefel,
            threshold: 1e-10,
            details: json!({"max_stiefel_violation": stiefel, "max_objective_increase": increase, "monotone": monotone}),
        })
    })
}

/// Idempotence of the isotropic projector, invariance of transforms, and
/// merging of equivalent atoms.
pub fn isotropy(cfg: &VerifyConfig) -> CriterionResult {
    timed(10, "isotropy", 30.0, || {
        let mut rng = stream(cfg.seed, "verify.isotropy");
        let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

        // Idempotence on closed designs, for generic plane functions.
        let mut idempotence = 0.0f64;
        let circle = DirectionDesign::full_circle(16)?;
        let t1 = UniformGrid::cube(1, 3.0, 31)?;
        let noise: Vec<f64> = (0..circle.len() * t1.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = PlaneFunction::new(circle.clone(), t1.clone(), noise)?;
        let p = project_iso(&g, &default_u_samples(1))?;
        let pp = project_iso(&p, &default_u_samples(1))?;
        idempotence = idempotence.max(max_diff(&pp.values, &p.values));
        let perms = DirectionDesign::signed_permutations(3)?;
        let sub = DirectionDesign::uniform(3, 1, perms.matrices().iter().map(|a| a.rows(0, 2).into_owned()).collect())?;
        let t2 = UniformGrid::cube(2, 1.0, 5)?;
        let noise: Vec<f64> = (0..sub.len() * t2.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = PlaneFunction::new(sub, t2, noise)?;
        let p = project_iso(&g, &default_u_samples(2))?;
        let pp = project_iso(&p, &default_u_samples(2))?;
        idempotence = idempotence.max(max_diff(&pp.values, &p.values));

        // Transforms of functions are fixed points.
        let grid = UniformGrid::cube(2, 6.0, 96)?;
        let phi = GridFunction::from_fn(grid.clone(), |x| {
            (-((x[0] - 0.8).powi(2) + (x[1] + 0.3).powi(2)) / 2.0).exp() * (1.0 + 0.3 * x[0])
        });
        let r = kplane_transform(&phi, &circle, &covering_t_grid(&grid, 1, 1)?)?;
        let pr = project_iso(&r, &default_u_samples(1))?;
        let fixed = max_diff(&pr.values, &r.values) / r.max_abs();

        // Equivalent atoms (A, t) and (UA, Ut) merge, and evaluate alike.
        let spec = OperatorSpec::fractional_laplacian(2.0, 2, 1)?;
        let a = DMatrix::from_row_slice(1, 2, &[0.6, 0.8]);
        let b = DMatrix::from_row_slice(1, 2, &[0.8, -0.6]);
        let atoms = vec![
            Atom { v: 1.25, a: a.clone(), t: vec![0.3] },
            Atom { v: -0.5, a: -&a, t: vec![-0.3] },
            Atom { v: 0.75, a: b, t: vec![0.1] },
        ];
        let model = Model::new(spec, atoms, PolyCoeffs::zeros(2, 1), None)?;
        let merged_ok = reg_cost(&model) == 0.75 + 0.75 && model.merged().atoms().len() == 2;
        let profile = GreensProfile::for_spec(&spec)?;
        let mut invariant = true;
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let t = rng.random_range(-1.0..1.0);
            let z = (&a * &x)[0] - t;
            let uz = (-&a * &x)[0] + t;
            invariant &= rho(&profile, &[z]) == rho(&profile, &[uz]);
        }

        let passed = idempotence <= 1e-12 && fixed <= 1e-10 && merged_ok && invariant;
        Ok(Outcome {
            passed,
            value: idempotence,
            threshold: 1e-12,
            details: json!({
                "idempotence_error": idempotence,
                "transform_fixed_point_error": fixed,
                "reg_cost_merges_equivalent_atoms": merged_ok,
                "rotation_invariance_exact": invariant,
            }),
        })
    })
}

/// Every criterion, in order.
pub fn run_all(cfg: &VerifyConfig) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|f| f(cfg)).collect()
}

/// The criteria by id, in order.
pub const CRITERIA: [fn(&VerifyConfig) -> CriterionResult; 10] = [
    constants,
    greens_weak_identity,
    fourier_slice,
    filtered_backprojection_identity,
    biorthogonality,
    representer_sparsity,
    k0_reduction,
    univariate_consistency,
    trainer_invariants,
    isotropy,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_criteria_pass() {
        let cfg = VerifyConfig::default();
        for f in [constants, representer_sparsity, k0_reduction, univariate_consistency, trainer_invariants] {
            let r = f(&cfg);
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn errors_become_failures() {
        let r = timed(99, "broken", 1.0, || Err(crate::error::Error::Domain("nope".into())));
        assert!(!r.passed && r.error.is_some() && r.value.is_nan());
        assert!(r.line().starts_with("[FAIL]"));
    }
}
