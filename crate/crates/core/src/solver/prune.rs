use nalgebra::{DMatrix, DVector};

use crate::error::{dimension, Error, Result};

/// Carathéodory-style support reduction.
///
/// While the active atoms plus the polynomial terms outnumber the data, a
/// null direction `z` of `[G_S P]` exists; moving `(v_S, c)` along it leaves
/// the predictions unchanged, and moving in the direction where `‖v‖₁` does
/// not grow until the first weight hits zero shrinks the support by one.
pub fn prune_support(
    g: &DMatrix<f64>,
    p: &DMatrix<f64>,
    v: &DVector<f64>,
    c: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let rows = y.len();
    if g.nrows() != rows || p.nrows() != rows || g.ncols() != v.len() || p.ncols() != c.len() {
        return dimension("prune_support: G, P, v, c and y have inconsistent shapes");
    }
    let q = p.ncols();
    let mut v = v.clone();
    let mut c = c.clone();
    loop {
        let support: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
        let cols = support.len() + q;
        if cols <= rows {
            return Ok((v, c));
        }
        // Square up [G_S P] with zero rows so the SVD exposes the full
        // right singular basis.
        let mut b = DMatrix::zeros(cols, cols);
        for (k, &i) in support.iter().enumerate() {
            b.view_mut((0, k), (rows, 1)).copy_from(&g.column(i));
        }
        if q > 0 {
            b.view_mut((0, support.len()), (rows, q)).copy_from(p);
        }
        let svd = b.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return singular vectors".into()))?;
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
        let mut z: DVector<f64> = v_t.row(idx).transpose();
        let z_atoms = z.rows(0, support.len()).into_owned();
        if z_atoms.amax() <= 1e-12 * z.amax() {
            return Err(Error::Numerical(
                "null direction lies in the polynomial block; P is rank deficient".into(),
            ));
        }
        // Orient z so that ‖v_S + θ z_S‖₁ is nonincreasing for small θ > 0.
        let slope: f64 = support.iter().zip(z_atoms.iter()).map(|(&i, zi)| v[i].signum() * zi).sum();
        if slope > 0.0 {
            z = -z;
        }
        let mut theta = f64::INFINITY;
        let mut hit = None;
        for (k, &i) in support.iter().enumerate() {
            let zi = z[k];
            if zi * v[i].signum() < 0.0 {
                let step = v[i].abs() / zi.abs();
                if step < theta {
                    theta = step;
                    hit = Some(k);
                }
            }
        }
        let hit = hit.ok_or_else(|| Error::Numerical("no weight decreases along the null direction".into()))?;
        for (k, &i) in support.iter().enumerate() {
            v[i] = if k == hit { 0.0 } else { v[i] + theta * z[k] };
        }
        for j in 0..q {
            c[j] += theta * z[support.len() + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn already_sparse_is_unchanged() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, 1.0]);
        let p = DMatrix::from_element(3, 1, 1.0);
        let v = DVector::from_vec(vec![0.5, -1.0]);
        let c = DVector::from_vec(vec![2.0]);
        let y = DVector::zeros(3);
        let (v2, c2) = prune_support(&g, &p, &v, &c, &y).unwrap();
        assert_eq!((v2, c2), (v, c));
    }

    #[test]
    fn duplicate_columns_merge() {
        let g = DMatrix::from_row_slice(1, 2, &[2.0, 2.0]);
        let v = DVector::from_vec(vec![0.7, 0.4]);
        let y = DVector::zeros(1);
        let (v2, _) = prune_support(&g, &DMatrix::zeros(1, 0), &v, &DVector::zeros(0), &y).unwrap();
        let nonzero: Vec<f64> = v2.iter().copied().filter(|x| *x != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0] - 1.1).abs() < 1e-15);
        assert!(v2.lp_norm(1) <= v.lp_norm(1) + 1e-15);
    }

    #[test]
    fn random_wide_problem_reduces_to_row_count() {
        let mut rng = stream(4, "test");
        let g = DMatrix::from_fn(3, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = DMatrix::zeros(3, 0);
        let c = DVector::zeros(0);
        let y = DVector::zeros(3);
        let (v2, _) = prune_support(&g, &p, &v, &c, &y).unwrap();
        assert!(v2.iter().filter(|x| **x != 0.0).count() <= 3);
        assert!((&g * &v2 - &g * &v).amax() <= 1e-8);
        assert!(v2.lp_norm(1) <= v.lp_norm(1) + 1e-10);
    }
}
