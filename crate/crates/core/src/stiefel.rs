//! Matrices with orthonormal rows, `A Aᵀ = I`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `‖A Aᵀ - I‖_F`.
pub fn stiefel_violation(a: &DMatrix<f64>) -> f64 {
    let gram = a * a.transpose();
    (gram - DMatrix::identity(a.nrows(), a.nrows())).norm()
}

fn polar_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 1 {
        let norm = m.norm();
        return (norm > 0.0 && norm.is_finite()).then(|| m / norm);
    }
    let svd = m.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let max = sigma.max();
    let min = sigma.min();
    if !(max > 0.0 && max.is_finite()) || min <= 1e-14 * max {
        return None;
    }
    Some(svd.u? * svd.v_t?)
}

/// Nearest matrix with orthonormal rows in the Frobenius norm: the polar
/// factor `U Vᵀ` of the thin SVD `M = U Σ Vᵀ`.
///
/// A rank-deficient input is perturbed once by Gaussian noise of scale
/// `1e-12 ‖M‖_F` drawn from `rng`; if it is still deficient the projection
/// fails.
pub fn stiefel_project<R: Rng>(m: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 || m.nrows() > m.ncols() {
        return Err(Error::Domain(format!(
            "a {}x{} matrix cannot have orthonormal rows",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(q) = polar_factor(m) {
        return Ok(q);
    }
    let scale = 1e-12 * m.norm();
    let perturbed = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
        let z: f64 = rng.sample(StandardNormal);
        m[(r, c)] + scale * z
    });
    polar_factor(&perturbed).ok_or_else(|| {
        Error::Numerical("matrix is rank deficient even after perturbation".into())
    })
}

/// Orthonormal basis (as rows) of the orthogonal complement of the row space
/// of `a`, which must have orthonormal rows.
pub fn complement_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, d) = a.shape();
    if m == 1 && d == 2 {
        // Exact: the complement of -a is -(complement of a).
        return DMatrix::from_row_slice(1, 2, &[-a[(0, 1)], a[(0, 0)]]);
    }
    let mut basis: Vec<Vec<f64>> = (0..m).map(|r| a.row(r).iter().copied().collect()).collect();
    let mut extra = Vec::new();
    for e in 0..d {
        if basis.len() == d {
            break;
        }
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v.clone());
            extra.push(v);
        }
    }
    DMatrix::from_fn(extra.len(), d, |r, c| extra[r][c])
}

/// All `m x m` signed permutation matrices (the hyperoctahedral group).
pub fn signed_permutations(m: usize) -> Vec<DMatrix<f64>> {
    fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permutations(items, k + 1, out);
            items.swap(k, i);
        }
    }
    let mut perms = Vec::new();
    permutations(&mut (0..m).collect(), 0, &mut perms);
    perms.sort();
    let mut out = Vec::new();
    for perm in perms {
        for signs in 0..(1usize << m) {
            let mut u = DMatrix::zeros(m, m);
            for (r, &c) in perm.iter().enumerate() {
                u[(r, c)] = if (signs >> r) & 1 == 1 { -1.0 } else { 1.0 };
            }
            out.push(u);
        }
    }
    out
}
