//! Reference solutions for limiting cases, kept independent of the trainer.

use nalgebra::{DMatrix, DVector};

use crate::error::{dimension, domain, Error, Result};
use crate::greens::{rho, GreensProfile};
use crate::network::{merge_atoms, poly_matrix, Model};
use crate::operator::{null_space_dim, OperatorSpec};
use crate::polyspace::{enumerate_multi_indices, PolyCoeffs};
use crate::solver::{lasso, LassoConfig};

/// Interpolant `s(x) = Σ_i a_i k(x - x_i) + b(x)` with `Pᵀa = 0`.
#[derive(Debug, Clone)]
pub struct PolyharmonicInterpolant {
    pub a: DVector<f64>,
    pub b: PolyCoeffs,
    centres: DMatrix<f64>,
    profile: GreensProfile,
}

impl PolyharmonicInterpolant {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = self.b.eval(x);
        let mut z = vec![0.0; x.len()];
        for (i, ai) in self.a.iter().enumerate() {
            for (q, zq) in z.iter_mut().enumerate() {
                *zq = x[q] - self.centres[(i, q)];
            }
            s += ai * rho(&self.profile, &z);
        }
        s
    }

    /// `(‖Ka + Pb - y‖_∞, ‖Pᵀa‖_∞)` at the interpolation sites.
    pub fn residuals(&self, y: &DVector<f64>) -> (f64, f64) {
        let interp = (0..self.centres.nrows())
            .map(|i| {
                let xi: Vec<f64> = self.centres.row(i).iter().copied().collect();
                (self.eval(&xi) - y[i]).abs()
            })
            .fold(0.0, f64::max);
        let p = poly_matrix(self.centres.ncols(), self.b.degree, &self.centres);
        (interp, (p.transpose() * &self.a).amax())
    }
}

/// Solves `[K P; Pᵀ 0][a; b] = [y; 0]` with `K_ij = k_{α,d}(x_i - x_j)`, the
/// radial Green's function of `(-Δ)^{α/2}` in `d` variables.
///
/// The polynomial degree defaults to `⌈α⌉ - 1`; `degree` overrides it, e.g.
/// degree 1 gives the classical thin-plate spline for `α = 4, d = 2`.
pub fn polyharmonic_interpolate(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    degree: Option<i64>,
) -> Result<PolyharmonicInterpolant> {
    let (rows, d) = x.shape();
    if y.len() != rows {
        return dimension(format!("{rows} points but {} values", y.len()));
    }
    if !(alpha > d as f64) {
        return domain(format!("polyharmonic interpolation needs alpha > d, got alpha = {alpha}, d = {d}"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return domain("interpolation data must be finite");
    }
    let degree = degree.unwrap_or(alpha.ceil() as i64 - 1);
    let q = enumerate_multi_indices(d, degree).len();
    if rows < q {
        return domain(format!("{rows} points cannot determine the {q} polynomial coefficients of degree {degree}"));
    }
    for i in 0..rows {
        for j in 0..i {
            if (x.row(i) - x.row(j)).amax() == 0.0 {
                return domain(format!("points {j} and {i} coincide"));
            }
        }
    }
    let p = poly_matrix(d, degree, x);
    if q > 0 && p.clone().svd(false, false).rank(1e-10 * p.amax().max(1.0)) < q {
        return domain("polynomial block is rank deficient on these points");
    }
    let profile = GreensProfile::new(alpha, d)?;
    let size = rows + q;
    let mut system = DMatrix::zeros(size, size);
    for i in 0..rows {
        for j in 0..i {
            let z: Vec<f64> = (0..d).map(|c| x[(i, c)] - x[(j, c)]).collect();
            let k = rho(&profile, &z);
            system[(i, j)] = k;
            system[(j, i)] = k;
        }
        system[(i, i)] = rho(&profile, &vec![0.0; d]);
    }
    system.view_mut((0, rows), (rows, q)).copy_from(&p);
    system.view_mut((rows, 0), (q, rows)).copy_from(&p.transpose());
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(0, rows).copy_from(y);
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("saddle system is singular; are the points distinct and unisolvent?".into()))?;
    let out = PolyharmonicInterpolant {
        a: sol.rows(0, rows).into_owned(),
        b: PolyCoeffs::from_values(d, degree, sol.rows(rows, q).iter().copied().collect())?,
        centres: x.clone(),
        profile,
    };
    let (interp, side) = out.residuals(y);
    let scale = y.amax().max(f64::MIN_POSITIVE);
    if !(interp <= 1e-8 * scale.max(1.0) && side <= 1e-8 * out.a.amax().max(1.0)) {
        return Err(Error::Numerical(format!(
            "saddle system solved inaccurately: interpolation residual {interp:.3e}, side condition {side:.3e}"
        )));
    }
    Ok(out)
}

/// `count` equispaced knots over the data range padded by 10% on each side.
pub fn padded_knots(x: &[f64], count: usize) -> Result<Vec<f64>> {
    if x.is_empty() || count < 2 {
        return domain("need data and at least two knots");
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.1 * (hi - lo).max(f64::MIN_POSITIVE);
    let (lo, hi) = (lo - pad, hi + pad);
    Ok((0..count).map(|j| lo + (hi - lo) * j as f64 / (count - 1) as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridKnotOptimum {
    pub objective: f64,
    pub kkt_residual: f64,
    pub nnz: usize,
}

/// Optimum of `Σ (y_m - f(x_m))² + λ‖v‖₁` over univariate networks whose
/// kinks sit on the given knots: the dictionary is `ρ(x - t_j)` and
/// `ρ(-(x - t_j))` plus the polynomial block of degree `⌈α⌉ - 1`.
pub fn grid_knot_optimum_1d(
    x: &[f64],
    y: &[f64],
    alpha: f64,
    lambda: f64,
    knots: &[f64],
) -> Result<GridKnotOptimum> {
    if x.len() != y.len() {
        return dimension(format!("{} inputs but {} targets", x.len(), y.len()));
    }
    let spec = OperatorSpec::fractional_laplacian(alpha, 1, 0)?;
    let profile = GreensProfile::for_spec(&spec)?;
    let g = DMatrix::from_fn(x.len(), 2 * knots.len(), |m, j| {
        let (sign, t) = if j % 2 == 0 { (1.0, knots[j / 2]) } else { (-1.0, knots[j / 2]) };
        rho(&profile, &[sign * (x[m] - t)])
    });
    let xm = DMatrix::from_column_slice(x.len(), 1, x);
    let p = poly_matrix(1, spec.n_l(), &xm);
    let yv = DVector::from_column_slice(y);
    let sol = lasso(&g, &p, &yv, lambda, &LassoConfig::default())?;
    Ok(GridKnotOptimum {
        objective: sol.objective(&g, &p, &yv, lambda),
        kkt_residual: sol.kkt_residual,
        nnz: sol.v.iter().filter(|v| **v != 0.0).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparsityCertificate {
    pub ok: bool,
    pub nnz: usize,
    pub bound: i64,
}

/// `M - dim P_{n_L}`; the null space is trivial when `n_L = -1`.
pub fn sparsity_bound(d: usize, n_l: i64, data_count: usize) -> i64 {
    data_count as i64 - null_space_dim(d, n_l) as i64
}

/// Checks `nnz ≤ M - dim P_{n_L}` after merging equivalent atoms.
pub fn sparsity_certificate(model: &Model, data_count: usize) -> SparsityCertificate {
    let spec = model.spec();
    let bound = sparsity_bound(spec.d, spec.n_l(), data_count);
    let nnz = merge_atoms(model.atoms()).iter().filter(|a| a.v != 0.0).count();
    SparsityCertificate { ok: nnz as i64 <= bound, nnz, bound }
}
