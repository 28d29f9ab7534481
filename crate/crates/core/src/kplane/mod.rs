//! Grid-based k-plane transform calculus.
//!
//! A function on ℝ^d is sampled on a [`UniformGrid`]; a function on the
//! plane domain is sampled on a [`DirectionDesign`] times a uniform t-grid in
//! ℝ^{d-k}. The design weights are a probability quadrature, so
//! [`backproject`] averages rather than integrates over the Stiefel manifold.
//! With that normalization the inversion identity reads
//! `vol · R* K R = Id`, where `vol` is [`inversion_scale`].

mod design;
pub mod io;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

pub use design::DirectionDesign;

use crate::error::{dimension, Result};
use crate::fourier::{
    angular_frequencies, apply_multiplier, continuous_forward, dtft_at, fft_nd, for_each_index,
};
use crate::grid::{GridFunction, UniformGrid};
use crate::operator::{backprojection_constant, inversion_scale, OperatorSpec};
use crate::stiefel::{complement_basis, signed_permutations};

/// Edge-to-peak ratio above which a sampled function counts as truncated.
pub const DECAY_TOL: f64 = 1e-8;

/// Samples of `g(A_i, t)` on a design times a t-grid; direction-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFunction {
    pub design: DirectionDesign,
    pub t_grid: UniformGrid,
    pub values: Vec<f64>,
    /// Non-fatal precondition violations met while producing these values.
    pub warnings: Vec<String>,
}

impl PlaneFunction {
    pub fn new(design: DirectionDesign, t_grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        if t_grid.dim() != design.m() {
            return dimension(format!(
                "t-grid has dimension {} but the design needs {}",
                t_grid.dim(),
                design.m()
            ));
        }
        if values.len() != design.len() * t_grid.len() {
            return dimension(format!(
                "plane function needs {} values, got {}",
                design.len() * t_grid.len(),
                values.len()
            ));
        }
        Ok(Self { design, t_grid, values, warnings: Vec::new() })
    }

    pub fn from_fn(
        design: DirectionDesign,
        t_grid: UniformGrid,
        f: impl Fn(&DMatrix<f64>, &[f64]) -> f64,
    ) -> Result<Self> {
        let nodes = t_grid.nodes();
        let values = design
            .matrices()
            .iter()
            .flat_map(|a| nodes.iter().map(|t| f(a, t)).collect::<Vec<_>>())
            .collect();
        Self::new(design, t_grid, values)
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.t_grid.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Interpolated value at direction index `i` and offset `t`.
    pub fn at(&self, i: usize, t: &[f64]) -> f64 {
        self.t_grid.interpolate(self.slice(i), t)
    }

    /// Quadrature inner product `Σ_i w_i ∫ g_i h_i dt`.
    pub fn dot(&self, other: &PlaneFunction) -> Result<f64> {
        if self.design != other.design || self.t_grid != other.t_grid {
            return dimension("inner product of plane functions on different domains");
        }
        let n = self.t_grid.len();
        let cell = self.t_grid.cell_volume();
        let total = self
            .design
            .weights()
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let a = &self.values[i * n..(i + 1) * n];
                let b = &other.values[i * n..(i + 1) * n];
                w * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum::<f64>();
        Ok(total * cell)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_design(phi_dim: usize, design: &DirectionDesign, t_grid: &UniformGrid) -> Result<()> {
    if phi_dim != design.d() {
        return dimension(format!("function lives in ℝ^{phi_dim} but the design in ℝ^{}", design.d()));
    }
    if t_grid.dim() != design.m() {
        return dimension(format!("t-grid has dimension {}, expected {}", t_grid.dim(), design.m()));
    }
    Ok(())
}

/// A t-grid with the spacing of `grid` whose extent covers every projection
/// `A x` of the grid box.
pub fn covering_t_grid(grid: &UniformGrid, m: usize, refine: usize) -> Result<UniformGrid> {
    let h = grid.spacing().into_iter().fold(f64::INFINITY, f64::min) / refine.max(1) as f64;
    let radius = grid.extent.iter().map(|x| x * x).sum::<f64>().sqrt();
    let half = (radius / h).ceil() as usize;
    UniformGrid::cube(m, half as f64 * h, 2 * half + 1)
}

/// Discrete `R_k φ` by trapezoid quadrature along each k-plane, with
/// multilinear interpolation of `φ`. For `k = 0` this is `φ(Aᵀ t)`.
pub fn kplane_transform(
    phi: &GridFunction,
    design: &DirectionDesign,
    t_grid: &UniformGrid,
) -> Result<PlaneFunction> {
    check_design(phi.dim(), design, t_grid)?;
    let d = design.d();
    let k = design.k();
    let t_nodes = t_grid.nodes();
    let n_t = t_nodes.len();

    let h = phi.grid.spacing().into_iter().fold(f64::INFINITY, f64::min);
    let radius = phi.grid.extent.iter().map(|x| x * x).sum::<f64>().sqrt();
    let half = (radius / h).ceil() as usize;
    let s_count = 2 * half + 1;
    let s_total = s_count.pow(k as u32);
    let s_weight = h.powi(k as i32);

    let mut values = vec![0.0; design.len() * n_t];
    values.par_chunks_mut(n_t).zip(design.matrices().par_iter()).for_each(|(out, a)| {
        let basis = complement_basis(a);
        let mut x = vec![0.0; d];
        let mut s_idx = vec![0usize; k];
        for (slot, t) in out.iter_mut().zip(&t_nodes) {
            let base: Vec<f64> = (0..d).map(|c| (0..t.len()).map(|r| a[(r, c)] * t[r]).sum()).collect();
            if k == 0 {
                *slot = phi.at(&base);
                continue;
            }
            let mut acc = 0.0;
            for flat in 0..s_total {
                let mut rem = flat;
                for slot in s_idx.iter_mut().rev() {
                    *slot = rem % s_count;
                    rem /= s_count;
                }
                x.copy_from_slice(&base);
                for (r, &j) in s_idx.iter().enumerate() {
                    let s = (j as f64 - half as f64) * h;
                    for (c, xc) in x.iter_mut().enumerate() {
                        *xc += basis[(r, c)] * s;
                    }
                }
                acc += phi.at(&x);
            }
            *slot = acc * s_weight;
        }
    });

    let mut out = PlaneFunction::new(design.clone(), t_grid.clone(), values)?;
    let ratio = phi.boundary_ratio();
    if ratio > DECAY_TOL {
        out.warnings.push(format!(
            "input decays only to {ratio:.3e} of its peak at the grid boundary; transform values carry truncation error"
        ));
    }
    Ok(out)
}

/// Discrete `R_k* g(x) = Σ_i w_i g(A_i, A_i x)` on the nodes of `target`.
pub fn backproject(g: &PlaneFunction, target: &UniformGrid) -> Result<GridFunction> {
    let design = &g.design;
    if target.dim() != design.d() {
        return dimension(format!("target grid is {}-dimensional, design is in ℝ^{}", target.dim(), design.d()));
    }
    let m = design.m();
    let nodes = target.nodes();
    let values: Vec<f64> = nodes
        .par_iter()
        .map(|x| {
            let mut t = vec![0.0; m];
            let mut acc = 0.0;
            for (i, (a, w)) in design.matrices().iter().zip(design.weights()).enumerate() {
                for (r, tr) in t.iter_mut().enumerate() {
                    *tr = (0..x.len()).map(|c| a[(r, c)] * x[c]).sum();
                }
                acc += w * g.at(i, &t);
            }
            acc
        })
        .collect();
    GridFunction::new(target.clone(), values)
}

/// [`backproject`] together with a warning when the t-grid does not cover
/// every projection of the target, where values are extrapolated by zero.
pub fn backproject_checked(g: &PlaneFunction, target: &UniformGrid) -> Result<(GridFunction, Vec<String>)> {
    let design = &g.design;
    let mut warnings = Vec::new();
    if target.dim() == design.d() {
        'outer: for (i, a) in design.matrices().iter().enumerate() {
            for r in 0..design.m() {
                let reach: f64 = (0..design.d()).map(|c| a[(r, c)].abs() * target.extent[c]).sum();
                if reach > g.t_grid.extent[r] * (1.0 + 1e-12) {
                    warnings.push(format!(
                        "direction {i} projects the target beyond the t-grid; values extrapolated by zero"
                    ));
                    break 'outer;
                }
            }
        }
    }
    Ok((backproject(g, target)?, warnings))
}

/// The filter `K`: multiplies every t-slice by `c_{d,k} ‖ω‖^k` in the
/// Fourier domain. For `k = 0` it is multiplication by `c_{d,0} = 1`.
///
/// One-dimensional slices are convolved with the band-limited kernel of the
/// symbol (its inverse transform over `|ω| ≤ π/h`), sampled at the nodes and
/// applied as a linear convolution through a zero-padded DFT. Slices of
/// higher dimension are multiplied on the DFT frequencies of a twice
/// zero-padded slice.
pub fn filter_k(g: &PlaneFunction, spec: &OperatorSpec) -> Result<PlaneFunction> {
    let design = &g.design;
    if spec.d != design.d() || spec.k != design.k() {
        return dimension(format!(
            "operator is for (d, k) = ({}, {}), plane function for ({}, {})",
            spec.d,
            spec.k,
            design.d(),
            design.k()
        ));
    }
    let c = backprojection_constant(spec.d, spec.k)?;
    let mut out = g.clone();
    if spec.k == 0 {
        out.values.iter_mut().for_each(|v| *v *= c);
        return Ok(out);
    }
    let n_t = g.t_grid.len();
    if design.m() == 1 {
        let h = g.t_grid.spacing()[0];
        let n = n_t;
        let kernel = ramp_kernel(spec.k as u32, n, h);
        let padded = 2 * n;
        // Kernel in wrapped order: lags 0..n-1 then -(n-1)..-1.
        let mut kern = vec![Complex64::new(0.0, 0.0); padded];
        for lag in 0..n {
            kern[lag] = Complex64::new(c * h * kernel[lag], 0.0);
            if lag > 0 {
                kern[padded - lag] = kern[lag];
            }
        }
        fft_nd(&mut kern, &[padded], false);
        out.values.par_chunks_mut(n_t).for_each(|slice| {
            let mut buf = vec![Complex64::new(0.0, 0.0); padded];
            for (b, v) in buf.iter_mut().zip(slice.iter()) {
                b.re = *v;
            }
            fft_nd(&mut buf, &[padded], false);
            buf.iter_mut().zip(&kern).for_each(|(b, k)| *b *= k);
            fft_nd(&mut buf, &[padded], true);
            for (v, b) in slice.iter_mut().zip(&buf) {
                *v = b.re / padded as f64;
            }
        });
        return Ok(out);
    }
    let k = spec.k as i32;
    let shape = &g.t_grid.counts;
    let padded: Vec<usize> = shape.iter().map(|n| 2 * n).collect();
    let spacing = g.t_grid.spacing();
    out.values.par_chunks_mut(n_t).for_each(|slice| {
        let mut buf = vec![0.0; padded.iter().product()];
        for_each_index(shape, |flat, idx| {
            buf[pad_offset(idx, &padded)] = slice[flat];
        });
        let (filtered, _) = apply_multiplier(&buf, &padded, &spacing, |w| {
            c * w.iter().map(|x| x * x).sum::<f64>().sqrt().powi(k)
        });
        for_each_index(shape, |flat, idx| {
            slice[flat] = filtered[pad_offset(idx, &padded)];
        });
    });
    Ok(out)
}

/// Samples `κ(j h) = (1/2π) ∫_{|ω| ≤ π/h} |ω|^k e^{iωjh} dω`, `j = 0..n`.
fn ramp_kernel(k: u32, n: usize, h: f64) -> Vec<f64> {
    let omega = PI / h;
    let scale = omega.powi(k as i32 + 1) / PI;
    (0..n).map(|j| scale * cosine_moment(k, PI * j as f64)).collect()
}

/// `∫_0^1 u^k cos(a u) du` by integration by parts.
fn cosine_moment(k: u32, a: f64) -> f64 {
    if a == 0.0 {
        return 1.0 / (k as f64 + 1.0);
    }
    let (s, c) = a.sin_cos();
    let mut cos_m = s / a;
    let mut sin_m = (1.0 - c) / a;
    for p in 1..=k {
        let p = p as f64;
        let next_cos = s / a - p / a * sin_m;
        let next_sin = -c / a + p / a * cos_m;
        cos_m = next_cos;
        sin_m = next_sin;
    }
    cos_m
}

// The original samples sit at the start of each padded axis; the padding is
// the zero tail, so wrap-around images are a full slice length away.
fn pad_offset(idx: &[usize], padded: &[usize]) -> usize {
    idx.iter().zip(padded).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Relative L2 distance between the Fourier transform of `t ↦ R_k φ(A, t)`
/// and `φ̂(Aᵀ ω)` over the DFT frequencies of the t-grid.
pub fn fourier_slice_residual(phi: &GridFunction, a: &DMatrix<f64>) -> Result<f64> {
    let d = phi.dim();
    if a.ncols() != d || a.nrows() == 0 || a.nrows() > d {
        return dimension(format!("matrix is {}x{}, function lives in ℝ^{d}", a.nrows(), a.ncols()));
    }
    let m = a.nrows();
    let design = DirectionDesign::uniform(d, d - m, vec![a.clone()])?;
    let t_grid = covering_t_grid(&phi.grid, m, 1)?;
    let slice = kplane_transform(phi, &design, &t_grid)?;
    let t_spacing = t_grid.spacing();
    let lhs = continuous_forward(&slice.values, &t_grid.counts, &t_grid.origin(), &t_spacing);
    let freqs: Vec<Vec<f64>> =
        t_grid.counts.iter().zip(&t_spacing).map(|(&n, &h)| angular_frequencies(n, h)).collect();

    let mut omegas = Vec::with_capacity(lhs.len());
    for_each_index(&t_grid.counts, |_, idx| {
        omegas.push(idx.iter().enumerate().map(|(r, &i)| freqs[r][i]).collect::<Vec<f64>>());
    });
    let phi_origin = phi.grid.origin();
    let phi_spacing = phi.grid.spacing();
    let rhs: Vec<Complex64> = omegas
        .par_iter()
        .map(|w| {
            let xi = a.transpose() * DVector::from_column_slice(w);
            dtft_at(&phi.values, &phi.grid.counts, &phi_origin, &phi_spacing, xi.as_slice())
        })
        .collect();
    let num: f64 = lhs.iter().zip(&rhs).map(|(l, r)| (l - r).norm_sqr()).sum();
    let den: f64 = rhs.iter().map(|r| r.norm_sqr()).sum();
    Ok((num / den).sqrt())
}

/// `vol · R* K R φ` on the grid of `φ`.
pub fn filtered_backprojection(
    phi: &GridFunction,
    spec: &OperatorSpec,
    design: &DirectionDesign,
    t_grid: &UniformGrid,
) -> Result<GridFunction> {
    let plane = kplane_transform(phi, design, t_grid)?;
    let filtered = filter_k(&plane, spec)?;
    let mut out = backproject(&filtered, &phi.grid)?;
    let scale = inversion_scale(spec.d, spec.k)?;
    out.values.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// `‖vol · R* K R φ − φ‖_∞ / ‖φ‖_∞` over the central half of the grid.
pub fn fbp_identity_residual(
    phi: &GridFunction,
    spec: &OperatorSpec,
    design: &DirectionDesign,
    t_grid: &UniformGrid,
) -> Result<f64> {
    let recon = filtered_backprojection(phi, spec, design, t_grid)?;
    let mask = phi.grid.central_mask();
    let mut err = 0.0f64;
    for ((r, p), inside) in recon.values.iter().zip(&phi.values).zip(mask) {
        if inside {
            err = err.max((r - p).abs());
        }
    }
    Ok(err / phi.max_abs())
}

/// The standard sample of `O_m`: `{±1}` for `m = 1`, signed permutations
/// otherwise.
pub fn default_u_samples(m: usize) -> Vec<DMatrix<f64>> {
    signed_permutations(m)
}

/// `P_iso g(A, t) = mean_U g(UA, Ut)` over the given orthogonal samples.
///
/// When `UA` is not in the design the nearest design direction is used and a
/// warning is recorded.
pub fn project_iso(g: &PlaneFunction, u_samples: &[DMatrix<f64>]) -> Result<PlaneFunction> {
    let design = &g.design;
    let m = design.m();
    if u_samples.is_empty() || u_samples.iter().any(|u| u.shape() != (m, m)) {
        return dimension(format!("U-samples must be a nonempty list of {m}x{m} matrices"));
    }
    let mut warnings = g.warnings.clone();
    let mut worst = 0.0f64;
    let lookup: Vec<Vec<usize>> = design
        .matrices()
        .iter()
        .map(|a| {
            u_samples
                .iter()
                .map(|u| {
                    let ua = u * a;
                    design.find(&ua, 1e-9).unwrap_or_else(|| {
                        let (j, dist) = design.nearest(&ua);
                        worst = worst.max(dist);
                        j
                    })
                })
                .collect()
        })
        .collect();
    if worst > 0.0 {
        warnings.push(format!(
            "design is not closed under the U-samples; nearest directions used (distance up to {worst:.3e})"
        ));
    }

    let t_nodes = g.t_grid.nodes();
    let n_t = t_nodes.len();
    let inv = 1.0 / u_samples.len() as f64;
    let mut values = vec![0.0; g.values.len()];
    values.par_chunks_mut(n_t).enumerate().for_each(|(i, out)| {
        let mut ut = vec![0.0; m];
        for (slot, t) in out.iter_mut().zip(&t_nodes) {
            let mut acc = 0.0;
            for (u, &j) in u_samples.iter().zip(&lookup[i]) {
                for (r, x) in ut.iter_mut().enumerate() {
                    *x = (0..m).map(|c| u[(r, c)] * t[c]).sum();
                }
                acc += g.at(j, &ut);
            }
            *slot = acc * inv;
        }
    });
    Ok(PlaneFunction { design: design.clone(), t_grid: g.t_grid.clone(), values, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: UniformGrid, center: &[f64]) -> GridFunction {
        let c = center.to_vec();
        GridFunction::from_fn(grid, move |x| {
            (-x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0).exp()
        })
    }

    #[test]
    fn radon_of_gaussian() {
        let phi = gaussian(UniformGrid::cube(2, 7.0, 141).unwrap(), &[0.0, 0.0]);
        let design = DirectionDesign::half_circle(6).unwrap();
        let t_grid = UniformGrid::cube(1, 5.0, 51).unwrap();
        let r = kplane_transform(&phi, &design, &t_grid).unwrap();
        assert!(r.warnings.is_empty());
        let mut err = 0.0f64;
        for i in 0..design.len() {
            for (j, &v) in r.slice(i).iter().enumerate() {
                let t = t_grid.coordinate(0, j);
                err = err.max((v - (2.0 * PI).sqrt() * (-t * t / 2.0).exp()).abs());
            }
        }
        assert!(err / (2.0 * PI).sqrt() <= 1e-3, "{err}");
    }

    #[test]
    fn truncated_input_is_flagged() {
        let phi = gaussian(UniformGrid::cube(2, 2.0, 21).unwrap(), &[0.0, 0.0]);
        let design = DirectionDesign::half_circle(2).unwrap();
        let t_grid = UniformGrid::cube(1, 3.0, 7).unwrap();
        let r = kplane_transform(&phi, &design, &t_grid).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert!(kplane_transform(&phi, &design, &UniformGrid::cube(2, 1.0, 3).unwrap()).is_err());
    }

    #[test]
    fn k0_transform_reads_nodes() {
        let grid = UniformGrid::cube(2, 2.0, 9).unwrap();
        let phi = GridFunction::from_fn(grid.clone(), |x| (x[0] + 2.0 * x[1]).sin() + x[0] * x[0]);
        let design = DirectionDesign::signed_permutations(2).unwrap();
        let r = kplane_transform(&phi, &design, &grid).unwrap();
        for (i, a) in design.matrices().iter().enumerate() {
            for (j, t) in grid.nodes().iter().enumerate() {
                let x = a.transpose() * DVector::from_column_slice(t);
                assert_eq!(r.slice(i)[j], phi.at(x.as_slice()));
            }
        }
    }

    #[test]
    fn constant_backprojects_to_constant() {
        let design = DirectionDesign::half_circle(9).unwrap();
        let t_grid = UniformGrid::cube(1, 4.0, 41).unwrap();
        let g = PlaneFunction::from_fn(design, t_grid, |_, _| 2.5).unwrap();
        let target = UniformGrid::cube(2, 2.0, 11).unwrap();
        let (out, warnings) = backproject_checked(&g, &target).unwrap();
        assert!(warnings.is_empty());
        assert!(out.values.iter().all(|v| (v - 2.5).abs() < 1e-14));
        let (_, warnings) = backproject_checked(&g, &UniformGrid::cube(2, 3.5, 5).unwrap()).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn unfiltered_backprojection_is_rotation_symmetric() {
        let grid = UniformGrid::cube(2, 6.0, 97).unwrap();
        let phi = gaussian(grid.clone(), &[0.0, 0.0]);
        let design = DirectionDesign::half_circle(32).unwrap();
        let t_grid = covering_t_grid(&grid, 1, 1).unwrap();
        let back = backproject(&kplane_transform(&phi, &design, &t_grid).unwrap(), &grid).unwrap();
        let n = 97;
        let mut err = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                // (x, y) -> (-y, x)
                let rotated = back.values[(n - 1 - j) * n + i];
                err = err.max((back.values[i * n + j] - rotated).abs());
            }
        }
        assert!(err / back.max_abs() <= 1e-3, "{err}");
    }

    #[test]
    fn adjointness() {
        let grid = UniformGrid::cube(2, 6.0, 81).unwrap();
        let phi = gaussian(grid.clone(), &[0.5, -0.3]);
        let design = DirectionDesign::half_circle(24).unwrap();
        let t_grid = covering_t_grid(&grid, 1, 1).unwrap();
        let g = PlaneFunction::from_fn(design.clone(), t_grid.clone(), |a, t| {
            (-(t[0] - 0.2 * a[(0, 0)]).powi(2)).exp()
        })
        .unwrap();
        let lhs = kplane_transform(&phi, &design, &t_grid).unwrap().dot(&g).unwrap();
        let rhs = phi.dot(&backproject(&g, &grid).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-3 * lhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn filter_examples() {
        let spec0 = OperatorSpec::fractional_laplacian(3.0, 2, 0).unwrap();
        let design0 = DirectionDesign::signed_permutations(2).unwrap();
        let grid = UniformGrid::cube(2, 1.0, 5).unwrap();
        let g0 = PlaneFunction::from_fn(design0, grid, |a, t| a[(0, 0)] + t[0] * t[1]).unwrap();
        assert_eq!(filter_k(&g0, &spec0).unwrap().values, g0.values);

        let spec = OperatorSpec::fractional_laplacian(2.0, 2, 1).unwrap();
        let design = DirectionDesign::half_circle(2).unwrap();
        let t_grid = UniformGrid::cube(1, 10.0, 401).unwrap();
        let flat = PlaneFunction::from_fn(design.clone(), t_grid.clone(), |_, _| 1.0).unwrap();
        // The zero-padded constant is a box, so only the interior is flat.
        let out = filter_k(&flat, &spec).unwrap();
        let mid = out.slice(0)[200];
        assert!(mid.abs() < 0.02, "{mid}");
        assert!(filter_k(&flat, &spec0).is_err());

        // The slice transforms to 2π e^{-ω²/2}, so the reference is
        // 2c ∫_0^∞ ω e^{-ω²/2} cos(ωt) dω, by Simpson's rule.
        let c = 1.0 / (4.0 * PI);
        let gauss = PlaneFunction::from_fn(design, t_grid.clone(), |_, t| {
            (2.0 * PI).sqrt() * (-t[0] * t[0] / 2.0).exp()
        })
        .unwrap();
        let out = filter_k(&gauss, &spec).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (j, v) in out.slice(0).iter().enumerate() {
            let t = t_grid.coordinate(0, j);
            let n = 4000;
            let hw = 40.0 / n as f64;
            let mut s = 0.0;
            for q in 0..=n {
                let w = q as f64 * hw;
                let coef = if q == 0 || q == n { 1.0 } else if q % 2 == 1 { 4.0 } else { 2.0 };
                s += coef * w * (-w * w / 2.0).exp() * (w * t).cos();
            }
            let exact = 2.0 * c * s * hw / 3.0;
            num += (v - exact).powi(2);
            den += exact * exact;
        }
        assert!((num / den).sqrt() <= 1e-3, "{}", (num / den).sqrt());
    }

    #[test]
    fn cosine_moments_match_quadrature() {
        for k in 0..4u32 {
            for a in [0.0, PI, 2.0 * PI, 7.0 * PI, 1.3] {
                let n = 20_000;
                let mut s = 0.0;
                for q in 0..=n {
                    let u = q as f64 / n as f64;
                    let coef = if q == 0 || q == n { 1.0 } else if q % 2 == 1 { 4.0 } else { 2.0 };
                    s += coef * u.powi(k as i32) * (a * u).cos();
                }
                let simpson = s / (3.0 * n as f64);
                assert!((cosine_moment(k, a) - simpson).abs() < 1e-10, "k={k} a={a}");
            }
        }
    }

    #[test]
    fn fourier_slice_small() {
        let grid = UniformGrid::cube(2, 7.0, 129).unwrap();
        let a = DMatrix::from_row_slice(1, 2, &[0.6, 0.8]);
        let centered = fourier_slice_residual(&gaussian(grid.clone(), &[0.0, 0.0]), &a).unwrap();
        let shifted = fourier_slice_residual(&gaussian(grid, &[0.7, -0.4]), &a).unwrap();
        assert!(centered <= 1e-3, "{centered}");
        assert!(shifted <= 2.0 * centered.max(1e-6), "{shifted} vs {centered}");
    }

    #[test]
    fn k0_fbp_is_exact() {
        let grid = UniformGrid::cube(2, 3.0, 31).unwrap();
        let phi = gaussian(grid.clone(), &[0.4, 0.1]);
        let spec = OperatorSpec::fractional_laplacian(3.0, 2, 0).unwrap();
        let design = DirectionDesign::signed_permutations(2).unwrap();
        let r = fbp_identity_residual(&phi, &spec, &design, &grid).unwrap();
        assert!(r <= 1e-12, "{r}");
    }

    #[test]
    fn iso_projection_on_lines() {
        let design = DirectionDesign::full_circle(8).unwrap();
        let t_grid = UniformGrid::cube(1, 3.0, 31).unwrap();
        let u = default_u_samples(1);
        let even = PlaneFunction::from_fn(design.clone(), t_grid.clone(), |a, t| {
            (a[(0, 0)] * t[0]).cos() + t[0] * t[0]
        })
        .unwrap();
        assert_eq!(project_iso(&even, &u).unwrap().values, even.values);

        let odd = PlaneFunction::from_fn(design.clone(), t_grid.clone(), |a, t| a[(0, 1)] + t[0]).unwrap();
        let p = project_iso(&odd, &u).unwrap();
        assert!(p.max_abs() < 1e-15);
        let pp = project_iso(&p, &u).unwrap();
        assert_eq!(pp.values, p.values);

        let open = DirectionDesign::half_circle(4).unwrap();
        let g = PlaneFunction::from_fn(open, t_grid, |_, t| t[0]).unwrap();
        assert_eq!(project_iso(&g, &u).unwrap().warnings.len(), 1);
    }

    #[test]
    fn iso_fixed_point_for_invariant_functions() {
        // g(A, t) = h(Aᵀt, ‖t‖) is invariant under (A, t) -> (UA, Ut).
        let design = DirectionDesign::signed_permutations(3).unwrap();
        let sub = DirectionDesign::uniform(3, 1, design.matrices().iter().map(|a| a.rows(0, 2).into_owned()).collect());
        let sub = sub.unwrap();
        let t_grid = UniformGrid::cube(2, 1.0, 5).unwrap();
        let g = PlaneFunction::from_fn(sub, t_grid, |a, t| {
            let x = a.transpose() * DVector::from_column_slice(t);
            (x[0] + 2.0 * x[1] - x[2]).sin() + (t[0] * t[0] + t[1] * t[1]).sqrt()
        })
        .unwrap();
        let p = project_iso(&g, &default_u_samples(2)).unwrap();
        assert!(p.warnings.is_empty());
        let err = p.values.iter().zip(&g.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-12, "{err}");
    }

    #[test]
    fn transforms_are_linear() {
        let grid = UniformGrid::cube(2, 4.0, 41).unwrap();
        let f = gaussian(grid.clone(), &[0.3, 0.0]);
        let g = gaussian(grid.clone(), &[-0.5, 1.0]);
        let combo = GridFunction::new(
            grid.clone(),
            f.values.iter().zip(&g.values).map(|(a, b)| 2.0 * a - 0.5 * b).collect(),
        )
        .unwrap();
        let design = DirectionDesign::half_circle(5).unwrap();
        let t_grid = covering_t_grid(&grid, 1, 1).unwrap();
        let rf = kplane_transform(&f, &design, &t_grid).unwrap();
        let rg = kplane_transform(&g, &design, &t_grid).unwrap();
        let rc = kplane_transform(&combo, &design, &t_grid).unwrap();
        for ((a, b), c) in rf.values.iter().zip(&rg.values).zip(&rc.values) {
            assert!((2.0 * a - 0.5 * b - c).abs() < 1e-12);
        }
    }
}
