use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{soft_threshold, PolyBlock};
use crate::error::{domain, Error, Result};
use crate::greens::{rho, rho_gradient, GreensProfile};
use crate::network::{poly_matrix, Atom, Dataset, Model};
use crate::operator::{check_admissibility, OperatorSpec};
use crate::polyspace::PolyCoeffs;
use crate::rng::stream;
use crate::stiefel::{stiefel_project, stiefel_violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
}

/// How the biases start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `t_n = A_n x_{π(n)}` for a seeded assignment `π` of atoms to data
    /// points, so every initial kink passes through a data point.
    DataPoints,
    /// `t_n` uniform over the range of `{A_n x_m}`.
    UniformRange,
}

/// The `solver` block of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda: f64,
    pub width: usize,
    pub max_iter: usize,
    /// Initial step size.
    pub step: f64,
    /// Backtracking factor in (0, 1).
    pub shrink: f64,
    /// `σ` in the acceptance test `F(θ⁺) ≤ F(θ) - (σ/η)‖θ⁺ - θ‖²`.
    pub sufficient_decrease: f64,
    pub tol_kkt: f64,
    /// Stop when 100 accepted steps lower the objective by less than this
    /// fraction.
    pub tol_obj: f64,
    pub seed: u64,
    pub loss: Loss,
    pub init: InitScheme,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            width: 32,
            max_iter: 20_000,
            step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            tol_kkt: 1e-8,
            tol_obj: 1e-12,
            seed: 0,
            loss: Loss::Squared,
            init: InitScheme::DataPoints,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return domain(format!("solver.lambda must be positive, got {}", self.lambda));
        }
        if self.width == 0 {
            return domain("solver.width must be at least 1");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return domain("solver.step must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return domain("solver.shrink must lie in (0, 1)");
        }
        if !(self.sufficient_decrease >= 0.0 && self.sufficient_decrease < 1.0) {
            return domain("solver.sufficient_decrease must lie in [0, 1)");
        }
        if !(self.tol_kkt > 0.0 && self.tol_obj >= 0.0) {
            return domain("solver tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub data_fit: f64,
    pub l1: f64,
    pub stiefel_violation: f64,
    pub step: f64,
}

/// One row per accepted iterate, starting with the initialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn max_stiefel_violation(&self) -> f64 {
        self.rows.iter().map(|r| r.stiefel_violation).fold(0.0, f64::max)
    }

    /// Largest increase of the objective between consecutive rows.
    pub fn max_increase(&self) -> f64 {
        self.rows.windows(2).map(|w| w[1].objective - w[0].objective).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].objective <= w[0].objective + slack)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.rows.last().map(|r| r.objective)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iter,objective,data_fit,l1,stiefel_violation,step")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e}",
                r.iter, r.objective, r.data_fit, r.l1, r.stiefel_violation, r.step
            )?;
        }
        Ok(())
    }
}

/// Training error together with the iterates recorded before it.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub trace: Trace,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} recorded iterates)", self.error, self.trace.rows.len())
    }
}

impl std::error::Error for TrainFailure {}

impl From<Box<TrainFailure>> for Error {
    fn from(failure: Box<TrainFailure>) -> Self {
        failure.error
    }
}

/// `Σ (y_m - f(x_m))² + λ Σ |v_n|` for a model.
pub fn objective(model: &Model, data: &Dataset, lambda: f64) -> Result<f64> {
    let pred = model.predict(&data.x)?;
    let fit = (&data.y - pred).norm_squared();
    Ok(fit + lambda * model.atoms().iter().map(|a| a.v.abs()).sum::<f64>())
}

/// An atom counts as sitting on a kink when some `‖A_n x_m - t_n‖` is below
/// this, relative to `1 + ‖t_n‖`.
const KINK_TOL: f64 = 1e-9;

/// Steps that move the geometry are abandoned once backtracking has shrunk
/// them by this factor; the restricted steps take over.
const MIN_STEP_RATIO: f64 = 1e-8;

/// A step in `v` alone that fails at this fraction of the current step size
/// means the iterate is stationary.
const MIN_WEIGHT_STEP_RATIO: f64 = 1e-16;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Full,
    FreezeKinks,
    WeightsOnly,
}

#[derive(Clone)]
struct State {
    a: Vec<DMatrix<f64>>,
    t: Vec<DVector<f64>>,
    v: DVector<f64>,
}

struct Evaluated {
    state: State,
    c: DVector<f64>,
    z: Vec<Vec<DVector<f64>>>,
    residual: DVector<f64>,
    data_fit: f64,
    l1: f64,
}

impl Evaluated {
    fn objective(&self, lambda: f64) -> f64 {
        self.data_fit + lambda * self.l1
    }
}

struct Problem<'a> {
    data: &'a Dataset,
    rows: Vec<DVector<f64>>,
    profile: GreensProfile,
    p: DMatrix<f64>,
    block: PolyBlock,
    lambda: f64,
}

impl Problem<'_> {
    /// Evaluates the state with the polynomial refit by least squares.
    fn evaluate(&self, state: State) -> Evaluated {
        let m = self.rows.len();
        let n = state.v.len();
        let mut z = Vec::with_capacity(m);
        let mut atoms_part = DVector::zeros(m);
        for (i, x) in self.rows.iter().enumerate() {
            let mut zi = Vec::with_capacity(n);
            for j in 0..n {
                let zz = &state.a[j] * x - &state.t[j];
                atoms_part[i] += state.v[j] * rho(&self.profile, zz.as_slice());
                zi.push(zz);
            }
            z.push(zi);
        }
        let target = &self.data.y - &atoms_part;
        let c = self.block.coefficients(&target);
        let residual = if self.p.ncols() > 0 { target - &self.p * &c } else { target };
        let data_fit = residual.norm_squared();
        let l1 = state.v.lp_norm(1);
        Evaluated { state, c, z, residual, data_fit, l1 }
    }

    /// Gradients of the data-fit term in `(A_n, t_n, v_n)`.
    fn gradient(&self, e: &Evaluated) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>, DVector<f64>) {
        let n = e.state.v.len();
        let mut ga: Vec<DMatrix<f64>> = e.state.a.iter().map(|a| DMatrix::zeros(a.nrows(), a.ncols())).collect();
        let mut gt: Vec<DVector<f64>> = e.state.t.iter().map(|t| DVector::zeros(t.len())).collect();
        let mut gv = DVector::zeros(n);
        for (i, x) in self.rows.iter().enumerate() {
            let r = e.residual[i];
            for j in 0..n {
                let z = &e.z[i][j];
                gv[j] -= 2.0 * r * rho(&self.profile, z.as_slice());
                let vj = e.state.v[j];
                if vj == 0.0 {
                    continue;
                }
                let grad = DVector::from_vec(rho_gradient(&self.profile, z.as_slice()));
                let w = -2.0 * r * vj;
                ga[j] += w * &grad * x.transpose();
                gt[j] -= w * &grad;
            }
        }
        (ga, gt, gv)
    }
}

fn initialize(problem: &Problem, spec: &OperatorSpec, config: &FitConfig) -> Result<State> {
    let (d, m) = (spec.d, spec.m());
    let mut rng_a = stream(config.seed, "solver.init.A");
    let mut rng_t = stream(config.seed, "solver.init.t");
    let mut a = Vec::with_capacity(config.width);
    for _ in 0..config.width {
        let g = DMatrix::from_fn(m, d, |_, _| rng_a.sample::<f64, _>(StandardNormal));
        a.push(stiefel_project(&g, &mut rng_a)?);
    }
    let rows = &problem.rows;
    let t = match config.init {
        InitScheme::DataPoints => {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut rng_t);
            a.iter().enumerate().map(|(n, an)| an * &rows[order[n % rows.len()]]).collect()
        }
        InitScheme::UniformRange => a
            .iter()
            .map(|an| {
                let proj: Vec<DVector<f64>> = rows.iter().map(|x| an * x).collect();
                DVector::from_fn(m, |q, _| {
                    let lo = proj.iter().map(|p| p[q]).fold(f64::INFINITY, f64::min);
                    let hi = proj.iter().map(|p| p[q]).fold(f64::NEG_INFINITY, f64::max);
                    lo + (hi - lo) * rng_t.random::<f64>()
                })
            })
            .collect(),
    };
    Ok(State { a, t, v: DVector::zeros(config.width) })
}

fn record(trace: &mut Trace, iter: usize, e: &Evaluated, lambda: f64, step: f64) {
    let stiefel = e.state.a.iter().map(stiefel_violation).fold(0.0, f64::max);
    trace.rows.push(TraceRow {
        iter,
        objective: e.objective(lambda),
        data_fit: e.data_fit,
        l1: e.l1,
        stiefel_violation: stiefel,
        step,
    });
}

/// Proximal-gradient training of `c(x) + Σ_n v_n ρ(A_n x - t_n)`.
///
/// Each iteration takes a gradient step in `(A_n, t_n)` followed by the
/// polar retraction of every `A_n`, a proximal step in `v`, and an exact
/// least-squares refit of the polynomial. Step sizes backtrack until
/// `F(θ⁺) ≤ F(θ) - (σ/η)‖θ⁺ - θ‖²`.
///
/// Atoms whose kink passes through a data point keep their geometry while a
/// step that moves only the others still decreases the objective; in one
/// variable this matches the fact that optimal knots can be taken at the
/// data. Otherwise every atom moves, and as a last resort only `v` does. A
/// geometry step that must shrink by more than `1e8` counts as failed; when
/// the step in `v` fails too, the iterate is stationary.
pub fn train(
    data: &Dataset,
    spec: &OperatorSpec,
    config: &FitConfig,
) -> std::result::Result<(Model, Trace), Box<TrainFailure>> {
    let fail = |error: Error, trace: &Trace| Box::new(TrainFailure { error, trace: trace.clone() });
    let mut trace = Trace::default();
    let setup = || -> Result<Problem> {
        config.validate()?;
        let report = check_admissibility(spec);
        if !report.ok {
            return domain(format!("operator is not admissible: {}", report.messages.join("; ")));
        }
        if data.dim() != spec.d {
            return domain(format!("data has {} features, operator has d = {}", data.dim(), spec.d));
        }
        let p = poly_matrix(spec.d, spec.n_l(), &data.x);
        let block = PolyBlock::new(&p)?;
        let rows = (0..data.len()).map(|i| DVector::from_vec(data.row(i))).collect();
        Ok(Problem { data, rows, profile: GreensProfile::for_spec(spec)?, p, block, lambda: config.lambda })
    };
    let problem = setup().map_err(|e| fail(e, &trace))?;
    let lambda = problem.lambda;
    let state = initialize(&problem, spec, config).map_err(|e| fail(e, &trace))?;
    let mut rng = stream(config.seed, "solver.retraction");

    let mut current = problem.evaluate(state);
    let mut step = config.step;
    record(&mut trace, 0, &current, lambda, step);
    if !current.objective(lambda).is_finite() {
        return Err(fail(Error::Numerical("initial objective is not finite".into()), &trace));
    }

    for iter in 1..=config.max_iter {
        let (ga, gt, gv) = problem.gradient(&current);
        let f0 = current.objective(lambda);
        let mut accepted = None;
        // Geometry of atoms whose kink passes through a data point; ρ is not
        // differentiable there, so a step that moves them may admit no
        // sufficient decrease at all.
        let on_kink: Vec<bool> = (0..current.state.v.len())
            .map(|j| current.z.iter().any(|zi| zi[j].norm() <= KINK_TOL * (1.0 + current.state.t[j].norm())))
            .collect();
        let modes: &[Mode] = if on_kink.contains(&true) {
            &[Mode::FreezeKinks, Mode::Full, Mode::WeightsOnly]
        } else {
            &[Mode::Full, Mode::WeightsOnly]
        };
        for &mode in modes {
            let floor = step * if mode == Mode::WeightsOnly { MIN_WEIGHT_STEP_RATIO } else { MIN_STEP_RATIO };
            let mut eta = step;
            while eta > floor {
                let mut trial = current.state.clone();
                let mut change = 0.0;
                for j in 0..trial.a.len() {
                    let frozen = match mode {
                        Mode::Full => false,
                        Mode::FreezeKinks => on_kink[j],
                        Mode::WeightsOnly => true,
                    };
                    if frozen {
                        continue;
                    }
                    let moved = &trial.a[j] - eta * &ga[j];
                    let projected = stiefel_project(&moved, &mut rng).map_err(|e| fail(e, &trace))?;
                    change += (&projected - &trial.a[j]).norm_squared();
                    trial.a[j] = projected;
                    let shifted = &trial.t[j] - eta * &gt[j];
                    change += (&shifted - &trial.t[j]).norm_squared();
                    trial.t[j] = shifted;
                }
                for j in 0..trial.v.len() {
                    let new = soft_threshold(trial.v[j] - eta * gv[j], eta * lambda);
                    change += (new - trial.v[j]).powi(2);
                    trial.v[j] = new;
                }
                if change == 0.0 {
                    break;
                }
                let candidate = problem.evaluate(trial);
                let f1 = candidate.objective(lambda);
                if f1.is_finite() && f1 <= f0 - config.sufficient_decrease / eta * change {
                    accepted = Some((candidate, eta));
                    break;
                }
                eta *= config.shrink;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((next, eta)) = accepted else { break };
        current = next;
        step = (eta / config.shrink).min(1e8);
        record(&mut trace, iter, &current, lambda, eta);
        let f = current.objective(lambda);
        if !f.is_finite() {
            return Err(fail(Error::Numerical(format!("objective became {f} at iteration {iter}")), &trace));
        }
        let len = trace.rows.len();
        if len > 100 {
            let old = trace.rows[len - 101].objective;
            if old - f <= config.tol_obj * f.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    let atoms: Vec<Atom> = (0..current.state.v.len())
        .filter(|&j| current.state.v[j] != 0.0)
        .map(|j| Atom { v: current.state.v[j], a: current.state.a[j].clone(), t: current.state.t[j].as_slice().to_vec() })
        .collect();
    let poly = PolyCoeffs::from_values(spec.d, spec.n_l(), current.c.as_slice().to_vec()).map_err(|e| fail(e, &trace))?;
    let model = Model::new(*spec, atoms, poly, None).map_err(|e| fail(e, &trace))?;
    Ok((model, trace))
}
