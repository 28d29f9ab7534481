use nalgebra::{DMatrix, DVector};

use crate::error::{dimension, domain, Error, Result};

/// Orthonormal basis `Q` of the polynomial block with `P = Q R`.
#[derive(Debug, Clone)]
pub(crate) struct PolyBlock {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl PolyBlock {
    pub(crate) fn new(p: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = p.shape();
        if cols == 0 {
            return Ok(Self { q: DMatrix::zeros(rows, 0), r: DMatrix::zeros(0, 0) });
        }
        if cols > rows {
            return domain(format!(
                "data-fitting problem ill-posed over the null space: {cols} polynomial terms but only {rows} data points"
            ));
        }
        let qr = p.clone().qr();
        let r = qr.r();
        let scale = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if (0..cols).any(|i| !(r[(i, i)].abs() > 1e-10 * scale)) {
            return domain("data-fitting problem ill-posed over the null space: polynomial block is rank deficient");
        }
        Ok(Self { q: qr.q(), r })
    }

    /// `(I - QQᵀ) x`.
    pub(crate) fn project_out(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return x.clone();
        }
        x - &self.q * (self.q.transpose() * x)
    }

    /// Least-squares coefficients `argmin_c ‖x - P c‖`.
    pub(crate) fn coefficients(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return DVector::zeros(0);
        }
        let rhs = self.q.transpose() * x;
        self.r.solve_upper_triangular(&rhs).expect("R has a nonzero diagonal")
    }
}

/// Stopping rules of [`lasso`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub tol_kkt: f64,
    pub max_iter: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { tol_kkt: 1e-8, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoResult {
    pub v: DVector<f64>,
    pub c: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl LassoResult {
    /// `‖y - Gv - Pc‖² + λ‖v‖₁`.
    pub fn objective(&self, g: &DMatrix<f64>, p: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
        let r = residual(g, p, y, &self.v, &self.c);
        r.norm_squared() + lambda * self.v.lp_norm(1)
    }
}

fn residual(g: &DMatrix<f64>, p: &DMatrix<f64>, y: &DVector<f64>, v: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    let mut r = y - g * v;
    if p.ncols() > 0 {
        r -= p * c;
    }
    r
}

fn check_shapes(g: &DMatrix<f64>, p: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if g.nrows() != y.len() || p.nrows() != y.len() {
        return dimension(format!(
            "G has {} rows, P has {} and y has {} entries",
            g.nrows(),
            p.nrows(),
            y.len()
        ));
    }
    if g.iter().chain(p.iter()).chain(y.iter()).any(|v| !v.is_finite()) {
        return domain("lasso inputs must be finite");
    }
    Ok(())
}

/// Largest violation of the optimality conditions of
/// `min ‖y - Gv - Pc‖² + λ‖v‖₁`, relative to `λ`, with `r = y - Gv - Pc`:
/// `2Gᵢᵀr = λ sign(vᵢ)` on the support, `|2Gᵢᵀr| ≤ λ` off it, `Pᵀr = 0`.
pub fn kkt_residual(
    g: &DMatrix<f64>,
    p: &DMatrix<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    c: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let r = residual(g, p, y, v, c);
    let grad = 2.0 * g.transpose() * &r;
    let mut worst = 0.0f64;
    for (gi, vi) in grad.iter().zip(v.iter()) {
        let violation = if *vi != 0.0 { (gi - lambda * vi.signum()).abs() } else { (gi.abs() - lambda).max(0.0) };
        worst = worst.max(violation / lambda);
    }
    if p.ncols() > 0 {
        worst = worst.max(2.0 * (p.transpose() * &r).amax() / lambda);
    }
    worst
}

/// `λ_max = 2‖Gᵀ(y - P c_LS)‖_∞`, the smallest `λ` with `v = 0` optimal.
pub fn lambda_max(g: &DMatrix<f64>, p: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    check_shapes(g, p, y)?;
    let block = PolyBlock::new(p)?;
    let r = block.project_out(y);
    Ok(2.0 * (g.transpose() * r).amax())
}

/// Minimizes `‖y - Gv - Pc‖² + λ‖v‖₁` over `v` and the unpenalized `c`.
///
/// The polynomial block is eliminated exactly (projection onto its
/// orthogonal complement) and `v` is found by feature-sign search: the most
/// violating zero coefficient joins the active set with the sign its
/// gradient dictates, the smooth problem on the active set is solved exactly,
/// and a line search over the sign changes along the way keeps the objective
/// decreasing. The active set stays no larger than the rank of `G`, so the
/// method suits wide, highly coherent dictionaries.
pub fn lasso(
    g: &DMatrix<f64>,
    p: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    config: &LassoConfig,
) -> Result<LassoResult> {
    check_shapes(g, p, y)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return domain(format!("lambda must be positive, got {lambda}"));
    }
    let block = PolyBlock::new(p)?;
    let n = g.ncols();
    let mut gt = g.clone();
    for mut col in gt.column_iter_mut() {
        let projected = block.project_out(&col.clone_owned());
        col.copy_from(&projected);
    }
    let yt = block.project_out(y);
    let objective = |v: &DVector<f64>| (&yt - &gt * v).norm_squared() + lambda * v.lp_norm(1);

    let mut v = DVector::zeros(n);
    let mut active: Vec<usize> = Vec::new();
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        // Gradient of the data term.
        let grad = -2.0 * gt.transpose() * (&yt - &gt * &v);
        let settled = active.iter().all(|&i| (grad[i] + lambda * v[i].signum()).abs() <= SETTLE_TOL * lambda);
        let mut signs: Vec<f64> = active.iter().map(|&i| v[i].signum()).collect();
        if settled {
            let entering = (0..n)
                .filter(|&i| v[i] == 0.0)
                .map(|i| (i, grad[i].abs()))
                .fold(None, |best: Option<(usize, f64)>, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            match entering {
                Some((i, size)) if size > lambda * (1.0 + SETTLE_TOL) => {
                    active.push(i);
                    signs.push(-grad[i].signum());
                }
                _ => break,
            }
        }
        // Exact minimizer of the smooth problem with the signs fixed.
        let ga = gt.select_columns(&active);
        let theta = DVector::from_vec(signs);
        let svd = ga.svd(true, true);
        let (u, vt) = (svd.u.as_ref().expect("U requested"), svd.v_t.as_ref().expect("Vᵀ requested"));
        let smax = svd.singular_values.max();
        let start = DVector::from_iterator(active.len(), active.iter().map(|&i| v[i]));
        let (kmin, smin) = svd.singular_values.argmin();
        if smin <= DEPENDENT_TOL * smax {
            // The active columns are dependent, so the fixed-sign problem has
            // no unique minimizer. Move along the null direction in which
            // ‖v‖₁ decreases until a coefficient reaches zero; the fit is
            // unchanged.
            let mut z: DVector<f64> = vt.row(kmin).transpose();
            if theta.dot(&z) > 0.0 {
                z = -z;
            }
            let mut step = f64::INFINITY;
            let mut hit = None;
            for k in 0..active.len() {
                if theta[k] * z[k] < 0.0 {
                    let s = start[k].abs() / z[k].abs();
                    if s < step {
                        step = s;
                        hit = Some(k);
                    }
                }
            }
            let Some(hit) = hit else { break };
            let mut next = v.clone();
            for (k, &i) in active.iter().enumerate() {
                next[i] = if k == hit { 0.0 } else { start[k] + step * z[k] };
            }
            if !(objective(&next) < objective(&v)) {
                break;
            }
            v = next;
            active.retain(|&i| v[i] != 0.0);
            continue;
        }
        // x = V Σ⁻¹ Uᵀ ỹ - (λ/2) V Σ⁻² Vᵀ θ from the SVD of G_A, which avoids
        // squaring its condition number.
        let uy = u.transpose() * &yt;
        let vth = vt * &theta;
        let coeffs = DVector::from_fn(svd.singular_values.len(), |k, _| {
            let sk = svd.singular_values[k];
            uy[k] / sk - lambda / 2.0 * vth[k] / (sk * sk)
        });
        let target = vt.transpose() * coeffs;
        // Candidates: the target and every point on the way where a
        // coefficient changes sign.
        let mut candidates = vec![1.0];
        for k in 0..active.len() {
            let (a, b) = (start[k], target[k]);
            if a != 0.0 && a * b < 0.0 {
                candidates.push(a / (a - b));
            }
        }
        let mut best: Option<(f64, DVector<f64>)> = None;
        for s in candidates {
            let mut trial = v.clone();
            for (k, &i) in active.iter().enumerate() {
                trial[i] = start[k] + s * (target[k] - start[k]);
            }
            if s < 1.0 {
                // Snap the coefficient that reached zero.
                for (k, &i) in active.iter().enumerate() {
                    let a = start[k];
                    if a != 0.0 && a * target[k] < 0.0 && (a / (a - target[k]) - s).abs() <= 1e-15 {
                        trial[i] = 0.0;
                    }
                }
            }
            let f = objective(&trial);
            if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
                best = Some((f, trial));
            }
        }
        let (f_new, next) = best.expect("at least one candidate");
        if !(f_new < objective(&v)) {
            break;
        }
        v = next;
        active.retain(|&i| v[i] != 0.0);
    }
    let c = block.coefficients(&(y - g * &v));
    let kkt = kkt_residual(g, p, y, &v, &c, lambda);
    if !(kkt <= config.tol_kkt) {
        return Err(Error::Numerical(format!(
            "lasso stopped after {iterations} iterations with KKT residual {kkt:.3e} above {:.1e}",
            config.tol_kkt
        )));
    }
    Ok(LassoResult { v, c, kkt_residual: kkt, iterations })
}

/// Relative tolerance on the optimality conditions inside the active-set
/// iteration.
const SETTLE_TOL: f64 = 1e-10;

/// Active columns whose smallest singular value falls below this fraction of
/// the largest are treated as dependent.
const DEPENDENT_TOL: f64 = 1e-8;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::soft_threshold;

    fn empty(rows: usize) -> DMatrix<f64> {
        DMatrix::zeros(rows, 0)
    }

    #[test]
    fn identity_dictionary_is_soft_thresholding() {
        let y = DVector::from_vec(vec![3.0, -0.2, 0.7, -2.0]);
        let g = DMatrix::identity(4, 4);
        let lambda = 1.0;
        let out = lasso(&g, &empty(4), &y, lambda, &LassoConfig::default()).unwrap();
        for i in 0..4 {
            // Brute-force the scalar problem (y - v)² + λ|v| on a fine grid.
            let (mut best, mut arg) = (f64::INFINITY, 0.0);
            for j in -400_000..=400_000 {
                let v = j as f64 * 1e-5;
                let f = (y[i] - v).powi(2) + lambda * v.abs();
                if f < best {
                    best = f;
                    arg = v;
                }
            }
            assert!((out.v[i] - soft_threshold(y[i], lambda / 2.0)).abs() < 1e-12);
            assert!((out.v[i] - arg).abs() < 2e-5);
        }
        assert!(out.kkt_residual <= 1e-8);
    }

    #[test]
    fn above_lambda_max_only_the_polynomial_fits() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 3.0 - 2.0).collect();
        let y = DVector::from_iterator(12, x.iter().map(|t| t.sin() + 0.3 * t));
        let g = DMatrix::from_fn(12, 6, |r, c| (x[r] - c as f64 + 2.5).abs());
        let p = DMatrix::from_fn(12, 2, |r, c| if c == 0 { 1.0 } else { x[r] });
        let lmax = lambda_max(&g, &p, &y).unwrap();
        let out = lasso(&g, &p, &y, lmax * 1.0001, &LassoConfig::default()).unwrap();
        assert!(out.v.iter().all(|v| *v == 0.0));
        let ls = p.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        assert!((&out.c - ls).amax() < 1e-10);
        let out = lasso(&g, &p, &y, lmax * 0.5, &LassoConfig::default()).unwrap();
        assert!(out.v.iter().any(|v| *v != 0.0));
        assert!(out.kkt_residual <= 1e-8, "{}", out.kkt_residual);
    }

    #[test]
    fn polynomial_data_needs_no_atoms() {
        let x: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let y = DVector::from_iterator(7, x.iter().map(|t| 2.0 - t));
        let g = DMatrix::from_fn(7, 4, |r, c| -(x[r] - c as f64).abs() / 2.0);
        let p = DMatrix::from_fn(7, 2, |r, c| if c == 0 { 1.0 } else { x[r] });
        let out = lasso(&g, &p, &y, 1e-3, &LassoConfig::default()).unwrap();
        assert!(out.v.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rank_deficient_polynomial_block_is_rejected() {
        let p = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let g = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(lasso(&g, &p, &y, 0.1, &LassoConfig::default()).is_err());
        assert!(lasso(&g, &empty(3), &y, 0.0, &LassoConfig::default()).is_err());
    }
}
