//! Uniform tensor grids and sampled functions on them.
//!
//! Axis `a` has nodes `-X_a + j · 2X_a / (n_a - 1)`, `j = 0..n_a`, so every
//! grid is symmetric about the origin and contains it iff `n_a` is odd.

use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Result};
use crate::fourier::for_each_index;

/// Interpolation positions within this many cells of a node snap onto it,
/// so that exactly representable node coordinates read back exact values.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub extent: Vec<f64>,
    pub counts: Vec<usize>,
}

impl UniformGrid {
    pub fn new(extent: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if extent.len() != counts.len() || extent.is_empty() {
            return dimension("grid extent and counts must have the same nonzero length");
        }
        if extent.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return domain("grid extents must be positive");
        }
        if counts.iter().any(|&n| n < 2) {
            return domain("every grid axis needs at least two nodes");
        }
        Ok(Self { extent, counts })
    }

    /// Same extent and count on every axis.
    pub fn cube(dim: usize, extent: f64, count: usize) -> Result<Self> {
        Self::new(vec![extent; dim], vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.extent
            .iter()
            .zip(&self.counts)
            .map(|(&x, &n)| 2.0 * x / (n - 1) as f64)
            .collect()
    }

    pub fn origin(&self) -> Vec<f64> {
        self.extent.iter().map(|&x| -x).collect()
    }

    /// Volume of one cell, the trapezoid weight of an interior node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Exactly antisymmetric in `j <-> n - 1 - j`.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        let steps = (self.counts[axis] - 1) as f64;
        (2.0 * j as f64 - steps) * self.extent[axis] / steps
    }

    /// Node coordinates in row-major order.
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for_each_index(&self.counts, |_, idx| {
            out.push(idx.iter().enumerate().map(|(a, &j)| self.coordinate(a, j)).collect());
        });
        out
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut x = vec![0.0; self.dim()];
        for_each_index(&self.counts, |_, idx| {
            for (a, &j) in idx.iter().enumerate() {
                x[a] = self.coordinate(a, j);
            }
            out.push(f(&x));
        });
        out
    }

    /// Multilinear interpolation of `values` at `x`; zero outside the grid.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let dim = self.dim();
        debug_assert_eq!(x.len(), dim);
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for a in 0..dim {
            let n = self.counts[a];
            let h = 2.0 * self.extent[a] / (n - 1) as f64;
            let mut pos = (x[a] + self.extent[a]) / h;
            let nearest = pos.round();
            if (pos - nearest).abs() < SNAP {
                pos = nearest;
            }
            if !(pos >= 0.0 && pos <= (n - 1) as f64) {
                return 0.0;
            }
            let i0 = (pos.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = pos - i0 as f64;
        }
        let mut strides = [0usize; 8];
        let mut s = 1;
        for a in (0..dim).rev() {
            strides[a] = s;
            s *= self.counts[a];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..dim {
                let hi = (corner >> a) & 1 == 1;
                let wa = if hi { frac[a] } else { 1.0 - frac[a] };
                if wa == 0.0 {
                    w = 0.0;
                    break;
                }
                w *= wa;
                flat += (base[a] + hi as usize) * strides[a];
            }
            if w != 0.0 {
                acc += w * values[flat];
            }
        }
        acc
    }

    /// Largest magnitude on the outer faces relative to the largest overall.
    pub fn boundary_ratio(&self, values: &[f64]) -> f64 {
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return 0.0;
        }
        let mut edge = 0.0f64;
        for_each_index(&self.counts, |flat, idx| {
            if idx.iter().zip(&self.counts).any(|(&j, &n)| j == 0 || j == n - 1) {
                edge = edge.max(values[flat].abs());
            }
        });
        edge / peak
    }

    /// Row-major flags marking nodes whose every coordinate lies within the
    /// central half `[-X/2, X/2]` of its axis.
    pub fn central_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.len());
        for_each_index(&self.counts, |_, idx| {
            out.push(
                idx.iter()
                    .enumerate()
                    .all(|(a, &j)| self.coordinate(a, j).abs() <= 0.5 * self.extent[a] + 1e-12),
            );
        });
        out
    }
}

/// Samples of a function on a [`UniformGrid`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return dimension(format!(
                "grid has {} nodes but {} values were supplied",
                grid.len(),
                values.len()
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: UniformGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = grid.sample(f);
        Self { grid, values }
    }

    pub fn zeros(grid: UniformGrid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn boundary_ratio(&self) -> f64 {
        self.grid.boundary_ratio(&self.values)
    }

    /// Trapezoid-rule inner product with another function on the same grid.
    pub fn dot(&self, other: &GridFunction) -> Result<f64> {
        if self.grid != other.grid {
            return dimension("inner product of functions on different grids");
        }
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(sum * self.grid.cell_volume())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_symmetric() {
        let g = UniformGrid::cube(1, 2.0, 5).unwrap();
        let xs: Vec<f64> = (0..5).map(|j| g.coordinate(0, j)).collect();
        assert_eq!(xs, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.spacing(), vec![1.0]);
    }

    #[test]
    fn interpolation_reproduces_affine_functions_and_nodes() {
        let g = UniformGrid::new(vec![1.0, 2.0], vec![11, 7]).unwrap();
        let f = GridFunction::from_fn(g.clone(), |x| 1.0 + 2.0 * x[0] - 3.0 * x[1]);
        for &p in &[[0.13, -0.4], [-0.99, 1.9], [0.5, 0.0]] {
            let exact = 1.0 + 2.0 * p[0] - 3.0 * p[1];
            assert!((f.at(&p) - exact).abs() < 1e-13);
        }
        let nodes = g.nodes();
        for (node, v) in nodes.iter().zip(&f.values) {
            assert_eq!(f.at(node), *v);
        }
        assert_eq!(f.at(&[1.5, 0.0]), 0.0);
    }

    #[test]
    fn central_mask_selects_inner_half() {
        let g = UniformGrid::cube(1, 4.0, 9).unwrap();
        let mask = g.central_mask();
        assert_eq!(mask, vec![false, false, true, true, true, true, true, false, false]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(UniformGrid::new(vec![1.0], vec![1]).is_err());
        assert!(UniformGrid::new(vec![1.0, 1.0], vec![3]).is_err());
        let g = UniformGrid::cube(2, 1.0, 3).unwrap();
        assert!(GridFunction::new(g, vec![0.0; 8]).is_err());
    }
}
