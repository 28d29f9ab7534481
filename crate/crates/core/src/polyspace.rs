//! Polynomial null space `P_{n_L}(R^d)`: monomial basis, a band-limited dual
//! basis, and the projector onto polynomials.
//!
//! The dual functions are defined spectrally, `m̂_n*(ξ) = (-iξ)^n κ̂(‖ξ‖)`,
//! with `κ̂` a smooth radial bump equal to 1 on `[0, R0]` and 0 beyond 1.
//! Biorthogonality `⟨m_n*, m_{n'}⟩ = δ[n - n']` follows from `κ̂` being flat
//! at the origin.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::fourier::{angular_frequencies, continuous_inverse, for_each_index};
use crate::greens::{GreensCase, GreensProfile};
use crate::grid::{GridFunction, UniformGrid};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&n| (1..=n).map(f64::from).product::<f64>()).product()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Schema(format!("multi-index {s:?} is not of the form (n1,...,nd)")))?;
        let entries = inner
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Schema(format!("bad multi-index entry {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiIndex(entries))
    }
}

/// All multi-indices of length `d` with `|n| <= n_max`, by degree and then
/// lexicographically.
pub fn enumerate_multi_indices(d: usize, n_max: i64) -> Vec<MultiIndex> {
    fn fill(prefix: &mut Vec<u32>, remaining: usize, total: u32, out: &mut Vec<MultiIndex>) {
        if remaining == 1 {
            prefix.push(total);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for first in 0..=total {
            prefix.push(first);
            fill(prefix, remaining - 1, total - first, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if d == 0 {
        return out;
    }
    for degree in 0..=n_max.max(-1) {
        fill(&mut Vec::with_capacity(d), d, degree as u32, &mut out);
    }
    out
}

/// `x^n / n!`.
pub fn monomial_eval(n: &MultiIndex, x: &[f64]) -> f64 {
    debug_assert_eq!(n.dim(), x.len());
    let mut value = 1.0;
    for (&e, &xi) in n.0.iter().zip(x) {
        for j in 1..=e {
            value *= xi / j as f64;
        }
    }
    value
}

/// Radial profile of the spectral bump, with `ψ(s) = h(s) / (h(s) + h(1-s))`
/// and `h(s) = exp(-1/s)` for `s > 0`.
pub fn kappa_hat(omega: f64, r0: f64) -> Result<f64> {
    if !(r0 > 0.0 && r0 <= 0.5) {
        return domain(format!("bump transition radius must lie in (0, 1/2], got {r0}"));
    }
    Ok(kappa_hat_unchecked(omega.abs(), r0))
}

fn kappa_hat_unchecked(omega: f64, r0: f64) -> f64 {
    if omega <= r0 {
        1.0
    } else if omega >= 1.0 {
        0.0
    } else {
        let s = (1.0 - omega) / (1.0 - r0);
        let h = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
        let (a, b) = (h(s), h(1.0 - s));
        a / (a + b)
    }
}

/// Coefficients `b_n` of `p(x) = Σ b_n m_n(x)`, stored densely over the
/// graded-lex basis of degree `<= degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCoeffs {
    pub d: usize,
    pub degree: i64,
    indices: Vec<MultiIndex>,
    values: Vec<f64>,
}

impl PolyCoeffs {
    pub fn zeros(d: usize, degree: i64) -> Self {
        let indices = enumerate_multi_indices(d, degree);
        let values = vec![0.0; indices.len()];
        Self { d, degree, indices, values }
    }

    pub fn from_values(d: usize, degree: i64, values: Vec<f64>) -> Result<Self> {
        let indices = enumerate_multi_indices(d, degree);
        if indices.len() != values.len() {
            return dimension(format!(
                "degree-{degree} polynomials in {d} variables have {} coefficients, got {}",
                indices.len(),
                values.len()
            ));
        }
        Ok(Self { d, degree, indices, values })
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, n: &MultiIndex) -> Option<f64> {
        self.indices.iter().position(|m| m == n).map(|i| self.values[i])
    }

    pub fn set(&mut self, n: &MultiIndex, value: f64) -> Result<()> {
        match self.indices.iter().position(|m| m == n) {
            Some(i) => {
                self.values[i] = value;
                Ok(())
            }
            None => domain(format!("{n} is not in the degree-{} basis for d={}", self.degree, self.d)),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(n, b)| b * monomial_eval(n, x)).sum()
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Quadrature grid and bump parameters of a [`PolyCorrector`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    #[serde(rename = "R0")]
    pub r0: f64,
    pub extent: f64,
    pub points_per_axis: usize,
}

impl CorrectorConfig {
    /// `R0 = 1/2`; 2¹² points on ±1024 in 1D, 2⁹ per axis on ±512 in 2D,
    /// 2⁸ per axis on ±256 in 3D.
    pub fn default_for(d: usize) -> Self {
        let (extent, points_per_axis) = match d {
            1 => (1024.0, 4096),
            2 => (512.0, 512),
            _ => (256.0, 256),
        };
        Self { r0: 0.5, extent, points_per_axis }
    }
}

/// Fine 1D samples of the univariate dual functions `D_j`, `j <= n_L`,
/// `D̂_j(ω) = (-iω)^j κ̂(|ω|)`. The pairing of any `m_n*` with a ridge
/// function `f(a·x - t)` reduces to `a^n ∫ f(u - t) D_{|n|}(u) du`.
#[derive(Debug, Clone)]
struct RidgeTable {
    grid: UniformGrid,
    /// Index range outside which every table is below roundoff.
    support: (usize, usize),
    tables: Vec<Vec<f64>>,
}

const RIDGE_POINTS: usize = 1 << 17;
const RIDGE_SPACING: f64 = 1.0 / 64.0;

impl RidgeTable {
    fn build(n_l: i64, r0: f64) -> Result<Self> {
        let extent = (RIDGE_POINTS - 1) as f64 * RIDGE_SPACING / 2.0;
        let grid = UniformGrid::cube(1, extent, RIDGE_POINTS)?;
        let h = grid.spacing()[0];
        let freqs = angular_frequencies(RIDGE_POINTS, h);
        let mut tables = Vec::new();
        for j in 0..=n_l.max(-1) {
            let spectrum: Vec<Complex64> = freqs
                .iter()
                .map(|&w| {
                    Complex64::new(0.0, -w).powu(j as u32) * kappa_hat_unchecked(w.abs(), r0)
                })
                .collect();
            let samples = continuous_inverse(&spectrum, &[RIDGE_POINTS], &[-extent], &[h]);
            tables.push(samples.iter().map(|z| z.re).collect::<Vec<f64>>());
        }
        let mut lo = RIDGE_POINTS;
        let mut hi = 0;
        for table in &tables {
            let peak = table.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (i, v) in table.iter().enumerate() {
                if v.abs() > 1e-14 * peak {
                    lo = lo.min(i);
                    hi = hi.max(i + 1);
                }
            }
        }
        if lo >= hi {
            lo = 0;
            hi = 0;
        }
        Ok(Self { grid, support: (lo, hi), tables })
    }

    /// `∫ ρ(u - t) D_j(u) du` for every `j`, by the trapezoid rule with the
    /// leading kink correction when `ρ` is a multiple of `|s|`.
    fn pair_with_rho(&self, profile: &GreensProfile, t: f64) -> Vec<f64> {
        let h = self.grid.spacing()[0];
        let (lo, hi) = self.support;
        let rho_vals: Vec<f64> =
            (lo..hi).map(|i| profile.radial((self.grid.coordinate(0, i) - t).abs())).collect();
        let unit_kink =
            profile.case == GreensCase::Power && (profile.alpha - profile.m as f64 - 1.0).abs() < 1e-15;
        self.tables
            .iter()
            .map(|table| {
                let mut sum: f64 = rho_vals.iter().zip(&table[lo..hi]).map(|(r, d)| r * d).sum();
                sum *= h;
                if unit_kink {
                    // ρ = C|s| has derivative jump J = 2C·D(t) at s = t; with
                    // the kink at fractional offset θ between nodes the
                    // trapezoid rule errs by -J h² B₂(θ)/2, B₂(θ) = θ² - θ + 1/6.
                    let pos = (t + self.grid.extent[0]) / h;
                    let theta = pos - pos.floor();
                    let d_t = self.grid.interpolate(table, &[t]);
                    let jump = 2.0 * profile.constant * d_t;
                    sum += jump * h * h * (theta * theta - theta + 1.0 / 6.0) / 2.0;
                }
                sum
            })
            .collect()
    }
}

/// Dual basis samples on a quadrature grid, plus the projector built on them.
#[derive(Debug, Clone)]
pub struct PolyCorrector {
    d: usize,
    n_l: i64,
    config: CorrectorConfig,
    grid: UniformGrid,
    indices: Vec<MultiIndex>,
    duals: Vec<Vec<f64>>,
    imag_residue: f64,
    ridge: RidgeTable,
}

impl PolyCorrector {
    pub fn build(d: usize, n_l: i64, config: &CorrectorConfig) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::Config(format!("correctors are supported for d in 1..=3, got {d}")));
        }
        if !(-1..=3).contains(&n_l) {
            return Err(Error::Config(format!("correctors are supported for n_L <= 3, got {n_l}")));
        }
        if !(config.r0 > 0.0 && config.r0 <= 0.5) {
            return Err(Error::Config(format!("R0 must lie in (0, 1/2], got {}", config.r0)));
        }
        let grid = UniformGrid::cube(d, config.extent, config.points_per_axis)?;
        let h = grid.spacing()[0];
        if std::f64::consts::PI / h <= 1.0 {
            return Err(Error::Config(format!(
                "grid spacing {h} leaves the bump support above the Nyquist frequency"
            )));
        }
        let indices = enumerate_multi_indices(d, n_l);
        let shape = grid.counts.clone();
        let freqs: Vec<Vec<f64>> = shape.iter().map(|&n| angular_frequencies(n, h)).collect();
        let origin = grid.origin();
        let spacing = grid.spacing();

        let mut duals = Vec::with_capacity(indices.len());
        let mut imag_residue: f64 = 0.0;
        for n in &indices {
            let mut spectrum = vec![Complex64::new(0.0, 0.0); grid.len()];
            let phase = Complex64::new(0.0, -1.0).powu(n.degree());
            for_each_index(&shape, |flat, idx| {
                let mut norm2 = 0.0;
                let mut mono = 1.0;
                for (a, &i) in idx.iter().enumerate() {
                    let w = freqs[a][i];
                    norm2 += w * w;
                    mono *= w.powi(n.0[a] as i32);
                }
                let bump = kappa_hat_unchecked(norm2.sqrt(), config.r0);
                if bump != 0.0 {
                    spectrum[flat] = phase * mono * bump;
                }
            });
            let samples = continuous_inverse(&spectrum, &shape, &origin, &spacing);
            let peak = samples.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
            let imag = samples.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
            imag_residue = imag_residue.max(imag / peak);
            let real: Vec<f64> = samples.iter().map(|z| z.re).collect();
            let edge = grid.boundary_ratio(&real);
            if edge > 1e-8 {
                return Err(Error::Config(format!(
                    "dual function {n} keeps {edge:.2e} of its peak at the grid edge; enlarge the extent"
                )));
            }
            duals.push(real);
        }
        if imag_residue > 1e-10 {
            return Err(Error::Numerical(format!(
                "dual basis has imaginary residue {imag_residue:.2e}"
            )));
        }
        let ridge = RidgeTable::build(n_l, config.r0)?;
        Ok(Self { d, n_l, config: *config, grid, indices, duals, imag_residue, ridge })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_l(&self) -> i64 {
        self.n_l
    }

    pub fn config(&self) -> &CorrectorConfig {
        &self.config
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn imag_residue(&self) -> f64 {
        self.imag_residue
    }

    /// Samples of `m_n*` for the `i`-th basis index.
    pub fn dual(&self, i: usize) -> &[f64] {
        &self.duals[i]
    }

    /// `⟨m_n*, f⟩` for every basis index, by the trapezoid rule on the
    /// corrector grid.
    pub fn pair_samples(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.grid.len() {
            return dimension(format!(
                "samples have length {}, corrector grid has {} nodes",
                samples.len(),
                self.grid.len()
            ));
        }
        let cell = self.grid.cell_volume();
        Ok(self
            .duals
            .iter()
            .map(|dual| dual.iter().zip(samples).map(|(a, b)| a * b).sum::<f64>() * cell)
            .collect())
    }

    /// Gram matrix `⟨m_n*, m_{n'}⟩` (rows: duals, columns: monomials).
    pub fn gram(&self) -> DMatrix<f64> {
        let q = self.indices.len();
        let mut gram = DMatrix::zeros(q, q);
        for (j, n) in self.indices.iter().enumerate() {
            let samples = self.grid.sample(|x| monomial_eval(n, x));
            let col = self.pair_samples(&samples).expect("grid-sized samples");
            for (i, v) in col.into_iter().enumerate() {
                gram[(i, j)] = v;
            }
        }
        gram
    }

    /// `⟨m_n*, ρ(A· - t)⟩` for every basis index.
    ///
    /// With one offset variable the pairing collapses onto a fine 1D table;
    /// otherwise it falls back to quadrature on the corrector grid.
    pub fn ridge_pairings(
        &self,
        profile: &GreensProfile,
        a: &DMatrix<f64>,
        t: &[f64],
    ) -> Result<Vec<f64>> {
        if a.ncols() != self.d || a.nrows() != t.len() || a.nrows() != profile.m {
            return dimension("ridge matrix does not match the corrector dimension");
        }
        if self.indices.is_empty() {
            return Ok(Vec::new());
        }
        if profile.m == 1 {
            let univariate = self.ridge.pair_with_rho(profile, t[0]);
            return Ok(self
                .indices
                .iter()
                .map(|n| {
                    let scale: f64 =
                        n.0.iter().enumerate().map(|(c, &e)| a[(0, c)].powi(e as i32)).product();
                    scale * univariate[n.degree() as usize]
                })
                .collect());
        }
        let samples = self.grid.sample(|x| {
            let z: Vec<f64> = (0..profile.m)
                .map(|r| (0..self.d).map(|c| a[(r, c)] * x[c]).sum::<f64>() - t[r])
                .collect();
            crate::greens::rho(profile, &z)
        });
        self.pair_samples(&samples)
    }
}

/// `P{f} = Σ ⟨m_n*, f⟩ m_n` for `f` sampled on the corrector grid.
pub fn project_poly(corrector: &PolyCorrector, f: &GridFunction) -> Result<PolyCoeffs> {
    if &f.grid != corrector.grid() {
        return domain("function is not sampled on the corrector grid");
    }
    let values = corrector.pair_samples(&f.values)?;
    PolyCoeffs::from_values(corrector.d(), corrector.n_l(), values)
}
