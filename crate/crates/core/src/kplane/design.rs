use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dimension, domain, Result};
use crate::rng::stream;
use crate::stiefel::{complement_basis, signed_permutations, stiefel_project, stiefel_violation};

/// Quadrature on the Stiefel manifold: matrices `A_i` with orthonormal rows
/// and nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionDesign {
    d: usize,
    k: usize,
    matrices: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
}

impl DirectionDesign {
    pub fn new(d: usize, k: usize, matrices: Vec<DMatrix<f64>>, weights: Vec<f64>) -> Result<Self> {
        if k >= d {
            return domain(format!("k = {k} must be smaller than d = {d}"));
        }
        if matrices.is_empty() || matrices.len() != weights.len() {
            return dimension("a design needs one weight per matrix and at least one matrix");
        }
        for (i, a) in matrices.iter().enumerate() {
            if a.shape() != (d - k, d) {
                return dimension(format!(
                    "design matrix {i} is {}x{}, expected {}x{d}",
                    a.nrows(),
                    a.ncols(),
                    d - k
                ));
            }
            let v = stiefel_violation(a);
            if !(v <= 1e-12) {
                return domain(format!("design matrix {i} violates AAᵀ = I by {v:e}"));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return domain("design weights must be nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return domain(format!("design weights sum to {total}, not 1"));
        }
        Ok(Self { d, k, matrices, weights })
    }

    /// Equal weights.
    pub fn uniform(d: usize, k: usize, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let w = 1.0 / matrices.len().max(1) as f64;
        let mut weights = vec![w; matrices.len()];
        // Put the rounding slack on one weight so the sum is 1 to the last bit
        // the summation order allows.
        if let Some(first) = weights.first_mut() {
            *first = 1.0 - w * (matrices.len() - 1) as f64;
        }
        Self::new(d, k, matrices, weights)
    }

    /// `n` lines in the plane at angles `π i / n`.
    pub fn half_circle(n: usize) -> Result<Self> {
        let rows = (0..n)
            .map(|i| {
                let th = PI * i as f64 / n as f64;
                DMatrix::from_row_slice(1, 2, &[th.cos(), th.sin()])
            })
            .collect();
        Self::uniform(2, 1, rows)
    }

    /// `n` (even) unit vectors in the plane: a half circle followed by the
    /// exact negations, so the design is closed under `a -> -a`.
    pub fn full_circle(n: usize) -> Result<Self> {
        if n == 0 || n % 2 == 1 {
            return domain("a closed circle design needs an even number of directions");
        }
        let half = Self::half_circle(n / 2)?;
        let mut rows = half.matrices.clone();
        rows.extend(half.matrices.iter().map(|a| -a));
        Self::uniform(2, 1, rows)
    }

    /// Roughly uniform unit vectors on the sphere (Fibonacci lattice on the
    /// upper hemisphere plus exact negations). `n` must be even.
    pub fn sphere(n: usize) -> Result<Self> {
        if n == 0 || n % 2 == 1 {
            return domain("a closed sphere design needs an even number of directions");
        }
        let half = n / 2;
        let golden = PI * (3.0 - 5f64.sqrt());
        let mut rows: Vec<DMatrix<f64>> = (0..half)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / half as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                DMatrix::from_row_slice(1, 3, &[r * phi.cos(), r * phi.sin(), z])
            })
            .collect();
        let negated: Vec<_> = rows.iter().map(|a| -a).collect();
        rows.extend(negated);
        Self::uniform(3, 2, rows)
    }

    /// Planes through the origin of ℝ³ with Fibonacci-sphere normals; each
    /// matrix is an orthonormal basis of the plane, so `k = 1`.
    pub fn sphere_planes(n: usize) -> Result<Self> {
        let normals = Self::sphere(2 * n)?;
        let rows = normals.matrices[..n].iter().map(complement_basis).collect();
        Self::uniform(3, 1, rows)
    }

    /// The signed permutation matrices, a closed design for `k = 0`.
    pub fn signed_permutations(d: usize) -> Result<Self> {
        Self::uniform(d, 0, signed_permutations(d))
    }

    /// `n` seeded draws from the Haar measure (Gaussian matrices through the
    /// polar factor).
    pub fn random(d: usize, k: usize, n: usize, seed: u64) -> Result<Self> {
        if k >= d {
            return domain(format!("k = {k} must be smaller than d = {d}"));
        }
        let mut rng = stream(seed, "kplane.design");
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let g = DMatrix::from_fn(d - k, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            rows.push(stiefel_project(&g, &mut rng)?);
        }
        Self::uniform(d, k, rows)
    }

    /// The closed default design for `(d, k)` with about `n` directions.
    pub fn default_for(d: usize, k: usize, n: usize) -> Result<Self> {
        match (d, k) {
            (_, 0) => Self::signed_permutations(d),
            (2, 1) => Self::full_circle(n + n % 2),
            (3, 2) => Self::sphere(n + n % 2),
            (3, 1) => Self::sphere_planes(n),
            _ => Self::random(d, k, n, 0),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Dimension `d - k` of the offset variable.
    pub fn m(&self) -> usize {
        self.d - self.k
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the design matrix within Frobenius distance `tol` of `a`.
    pub fn find(&self, a: &DMatrix<f64>, tol: f64) -> Option<usize> {
        self.matrices.iter().position(|b| (b - a).norm() <= tol)
    }

    /// Index of the closest design matrix and its distance.
    pub fn nearest(&self, a: &DMatrix<f64>) -> (usize, f64) {
        self.matrices
            .iter()
            .enumerate()
            .map(|(i, b)| (i, (b - a).norm()))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_designs_are_valid() {
        let cases = [
            DirectionDesign::half_circle(7).unwrap(),
            DirectionDesign::full_circle(12).unwrap(),
            DirectionDesign::sphere(40).unwrap(),
            DirectionDesign::sphere_planes(15).unwrap(),
            DirectionDesign::signed_permutations(3).unwrap(),
            DirectionDesign::random(4, 2, 9, 1).unwrap(),
        ];
        let sizes = [7, 12, 40, 15, 48, 9];
        for (design, n) in cases.iter().zip(sizes) {
            assert_eq!(design.len(), n);
            assert!((design.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_circle_is_closed_under_negation() {
        let design = DirectionDesign::full_circle(10).unwrap();
        for a in design.matrices() {
            let j = design.find(&-a, 0.0).expect("negation present");
            assert_eq!(design.matrices()[j], -a);
        }
    }

    #[test]
    fn rejects_invalid_input() {
        let bad = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(DirectionDesign::uniform(2, 1, vec![bad]).is_err());
        let ok = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(DirectionDesign::new(2, 1, vec![ok.clone()], vec![0.5]).is_err());
        assert!(DirectionDesign::new(2, 0, vec![ok], vec![1.0]).is_err());
        assert!(DirectionDesign::full_circle(7).is_err());
    }
}
