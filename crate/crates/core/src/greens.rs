//! Green's functions of fractional Laplacians, used as multivariate
//! nonlinearities, and the corrected kernel `g_{A,t}`.
//!
//! For `(-Δ_m)^{α/2}` acting on `m` variables with `α > m`:
//!
//! ```text
//! ρ(t) = A_{α,m} ‖t‖^{α-m}                 if α - m is not an even integer
//! ρ(t) = B_{m',m} ‖t‖^{2m'} log ‖t‖        if α - m = 2m'
//! A_{α,m}  = Γ((m-α)/2) / (2^α π^{m/2} Γ(α/2))
//! B_{m',m} = (-1)^{1+m'} / (2^{2m'+m-1} π^{m/2} Γ(m'+m/2) m'!)
//! ```
//!
//! Both branches vanish at the origin, and `ρ(0)` is defined as 0.


use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::fourier::apply_multiplier;
use crate::grid::{GridFunction, UniformGrid};
use crate::operator::{gamma_fn, pi_pow_half, OperatorSpec};
use crate::polyspace::{monomial_eval, PolyCorrector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreensCase {
    Power,
    PowerLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreensProfile {
    pub m: usize,
    pub alpha: f64,
    pub case: GreensCase,
    pub constant: f64,
    /// Half the log-branch exponent; zero on the power branch.
    pub m_prime: u32,
}

/// `α - m` as an even positive integer `2m'`, if it is one.
fn log_branch_index(alpha: f64, m: usize) -> Option<u32> {
    let half = (alpha - m as f64) / 2.0;
    let nearest = half.round();
    (nearest >= 1.0 && (half - nearest).abs() <= 1e-12).then_some(nearest as u32)
}

/// Branch tag, constant and `m'` of the Green's function for `(α, m)`.
pub fn greens_constant(alpha: f64, m: usize) -> Result<(GreensCase, f64, u32)> {
    if m == 0 {
        return domain("nonlinearity arity must be at least 1");
    }
    if !(alpha > m as f64) {
        return domain(format!(
            "pointwise Green's function undefined: need alpha > m, got alpha={alpha}, m={m}"
        ));
    }
    let mf = m as f64;
    match log_branch_index(alpha, m) {
        Some(mp) => {
            let mpf = mp as f64;
            let sign = if mp % 2 == 1 { 1.0 } else { -1.0 };
            let factorial: f64 = (1..=mp).map(f64::from).product();
            let denom = 2f64.powf(2.0 * mpf + mf - 1.0)
                * pi_pow_half(m as u32)
                * gamma_fn(mpf + mf / 2.0)
                * factorial;
            Ok((GreensCase::PowerLog, sign / denom, mp))
        }
        None => {
            let c = gamma_fn((mf - alpha) / 2.0)
                / (2f64.powf(alpha) * pi_pow_half(m as u32) * gamma_fn(alpha / 2.0));
            Ok((GreensCase::Power, c, 0))
        }
    }
}

impl GreensProfile {
    pub fn new(alpha: f64, m: usize) -> Result<Self> {
        let (case, constant, m_prime) = greens_constant(alpha, m)?;
        Ok(Self { m, alpha, case, constant, m_prime })
    }

    pub fn for_spec(spec: &OperatorSpec) -> Result<Self> {
        Self::new(spec.alpha, spec.m())
    }

    /// Same profile with an arbitrary constant; used to probe the oracle.
    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    /// `ρ` as a function of the radius `r = ‖t‖ >= 0`.
    pub fn radial(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        match self.case {
            GreensCase::Power => self.constant * r.powf(self.alpha - self.m as f64),
            GreensCase::PowerLog => self.constant * r.powi(2 * self.m_prime as i32) * r.ln(),
        }
    }

    /// Derivative of [`Self::radial`] in `r` (for `r > 0`).
    pub fn radial_derivative(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        match self.case {
            GreensCase::Power => {
                let beta = self.alpha - self.m as f64;
                self.constant * beta * r.powf(beta - 1.0)
            }
            GreensCase::PowerLog => {
                let p = 2 * self.m_prime as i32;
                self.constant * r.powi(p - 1) * (p as f64 * r.ln() + 1.0)
            }
        }
    }
}

pub fn rho(profile: &GreensProfile, t: &[f64]) -> f64 {
    profile.radial(t.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Gradient of `ρ` at `t`; zero at the origin.
pub fn rho_gradient(profile: &GreensProfile, t: &[f64]) -> Vec<f64> {
    let r = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return vec![0.0; t.len()];
    }
    let scale = profile.radial_derivative(r) / r;
    t.iter().map(|v| v * scale).collect()
}

/// Activations that differ from `ρ` only by sign and a null-space term, so
/// they span the same atom family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationAlias {
    /// `t_+ = -ρ(t) + t/2` for `α = 2`, `m = 1`.
    Relu,
}

impl ActivationAlias {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Self::Relu),
            other => Err(Error::Schema(format!("unknown activation alias {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relu => "relu",
        }
    }

    /// Checks the alias is null-space equivalent to `ρ` for this profile.
    pub fn check(&self, profile: &GreensProfile) -> Result<()> {
        match self {
            Self::Relu if profile.m == 1 && profile.alpha == 2.0 => Ok(()),
            Self::Relu => domain(format!(
                "relu alias needs alpha = 2 and m = 1, got alpha = {}, m = {}",
                profile.alpha, profile.m
            )),
        }
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        match self {
            Self::Relu => t[0].max(0.0),
        }
    }

    /// Sign `s` with `alias(t) = s · ρ(t) + (polynomial in t)`.
    pub fn sign_relative_to_rho(&self) -> f64 {
        match self {
            Self::Relu => -1.0,
        }
    }
}

/// Gaussian `G_σ(x) = exp(-‖x‖²/(2σ²))` hit with `(-Δ)^p`, `p ∈ {0, 1, 2}`.
///
/// Higher `p` makes the spectrum vanish at the origin, so that `Lφ` decays
/// fast even when the multiplier `‖ω‖^α` is not smooth there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub sigma: f64,
    pub laplacian_power: u32,
}

impl TestFunction {
    pub fn gaussian(sigma: f64) -> Self {
        Self { sigma, laplacian_power: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return domain(format!("test function width must be positive, got {}", self.sigma));
        }
        if self.laplacian_power > 2 {
            return domain(format!("Laplacian power {} is not supported (0, 1 or 2)", self.laplacian_power));
        }
        Ok(())
    }

    /// Value at `x` in `m = x.len()` dimensions. Call [`Self::validate`]
    /// first; unsupported powers panic here.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let m = x.len() as f64;
        let u2 = x.iter().map(|v| v * v).sum::<f64>() / (self.sigma * self.sigma);
        let g = (-u2 / 2.0).exp();
        let poly = match self.laplacian_power {
            0 => 1.0,
            1 => m - u2,
            2 => u2 * u2 - 2.0 * (m + 2.0) * u2 + m * (m + 2.0),
            p => panic!("laplacian power {p} not supported"),
        };
        poly * g / self.sigma.powi(2 * self.laplacian_power as i32)
    }
}

/// Grid and test-function parameters of the weak-identity oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakIdentityConfig {
    pub test: TestFunction,
    /// Half-width of the grid in units of σ.
    pub extent_sigmas: f64,
    pub points_per_axis: usize,
    /// Largest admissible boundary magnitude relative to the peak.
    pub boundary_tol: f64,
}

impl WeakIdentityConfig {
    /// Defaults: unit Gaussian (Laplacian power 2 when `α` is not an even
    /// integer), ±20σ with 2¹² points in 1D, ±16σ with 2⁹ points per axis
    /// otherwise.
    pub fn default_for(profile: &GreensProfile) -> Self {
        let even_alpha = profile.alpha.fract() == 0.0 && (profile.alpha as i64) % 2 == 0;
        let test = TestFunction { sigma: 1.0, laplacian_power: if even_alpha { 0 } else { 2 } };
        let (extent_sigmas, points_per_axis) = if profile.m == 1 { (20.0, 4096) } else { (16.0, 512) };
        Self { test, extent_sigmas, points_per_axis, boundary_tol: 1e-8 }
    }

    pub fn grid(&self, m: usize) -> Result<UniformGrid> {
        UniformGrid::cube(m, self.extent_sigmas * self.test.sigma, self.points_per_axis)
    }
}

/// `|⟨ρ, Lφ⟩ - φ(0)|` for a sampled test function, where `Lφ` is the
/// spectral multiplier `‖ω‖^α` applied by DFT and the pairing is the
/// trapezoid rule.
pub fn weak_identity_residual(
    profile: &GreensProfile,
    testfn: &GridFunction,
    value_at_origin: f64,
    boundary_tol: f64,
) -> Result<f64> {
    if testfn.dim() != profile.m {
        return dimension(format!(
            "test function lives in {} dimensions, profile in {}",
            testfn.dim(),
            profile.m
        ));
    }
    let ratio = testfn.boundary_ratio();
    if ratio > boundary_tol {
        return Err(Error::Config(format!(
            "test function boundary magnitude {ratio:.3e} of peak exceeds {boundary_tol:.1e}; enlarge the grid"
        )));
    }
    let grid = &testfn.grid;
    let alpha = profile.alpha;
    let (l_phi, _) = apply_multiplier(&testfn.values, &grid.counts, &grid.spacing(), |w| {
        w.iter().map(|v| v * v).sum::<f64>().powf(alpha / 2.0)
    });
    let rho_samples = grid.sample(|t| rho(profile, t));
    let pairing: f64 =
        rho_samples.iter().zip(&l_phi).map(|(r, l)| r * l).sum::<f64>() * grid.cell_volume();
    Ok((pairing - value_at_origin).abs())
}

/// Runs the oracle with an analytic test function.
pub fn weak_identity_with(profile: &GreensProfile, config: &WeakIdentityConfig) -> Result<f64> {
    config.test.validate()?;
    let grid = config.grid(profile.m)?;
    let test = config.test;
    let phi = GridFunction::from_fn(grid, |x| test.eval(x));
    let origin = vec![0.0; profile.m];
    weak_identity_residual(profile, &phi, test.eval(&origin), config.boundary_tol)
}

/// Runs the oracle with [`WeakIdentityConfig::default_for`].
pub fn weak_identity_default(profile: &GreensProfile) -> Result<f64> {
    weak_identity_with(profile, &WeakIdentityConfig::default_for(profile))
}

/// The kernel `g_{A,t}` with its polynomial correction coefficients cached.
#[derive(Debug, Clone)]
pub struct CorrectedKernel {
    profile: GreensProfile,
    a: DMatrix<f64>,
    t: Vec<f64>,
    indices: Vec<crate::polyspace::MultiIndex>,
    coefficients: Vec<f64>,
}

impl CorrectedKernel {
    pub fn new(
        spec: &OperatorSpec,
        a: &DMatrix<f64>,
        t: &[f64],
        corrector: &PolyCorrector,
    ) -> Result<Self> {
        if corrector.d() != spec.d || corrector.n_l() != spec.n_l() {
            return domain(format!(
                "corrector built for (d={}, n_L={}) but the operator has (d={}, n_L={})",
                corrector.d(),
                corrector.n_l(),
                spec.d,
                spec.n_l()
            ));
        }
        let profile = GreensProfile::for_spec(spec)?;
        Self::from_profile(profile, a, t, corrector)
    }

    pub(crate) fn from_profile(
        profile: GreensProfile,
        a: &DMatrix<f64>,
        t: &[f64],
        corrector: &PolyCorrector,
    ) -> Result<Self> {
        if a.nrows() != profile.m || a.ncols() != corrector.d() || t.len() != profile.m {
            return dimension(format!(
                "atom shape {}x{} with offset length {} does not match m={}, d={}",
                a.nrows(),
                a.ncols(),
                t.len(),
                profile.m,
                corrector.d()
            ));
        }
        let coefficients = corrector.ridge_pairings(&profile, a, t)?;
        Ok(Self {
            profile,
            a: a.clone(),
            t: t.to_vec(),
            indices: corrector.indices().to_vec(),
            coefficients,
        })
    }

    /// `⟨m_n*, ρ(A· - t)⟩` in graded-lex order.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = (0..self.profile.m)
            .map(|r| (0..x.len()).map(|c| self.a[(r, c)] * x[c]).sum::<f64>() - self.t[r])
            .collect();
        let correction: f64 = self
            .indices
            .iter()
            .zip(&self.coefficients)
            .map(|(n, c)| c * monomial_eval(n, x))
            .sum();
        rho(&self.profile, &z) - correction
    }
}

/// `g_{A,t}(x) = ρ(Ax - t) - Σ_{|n| <= n_L} ⟨m_n*, ρ(A· - t)⟩ m_n(x)`.
pub fn kernel_g(
    spec: &OperatorSpec,
    a: &DMatrix<f64>,
    t: &[f64],
    x: &[f64],
    corrector: &PolyCorrector,
) -> Result<f64> {
    if x.len() != spec.d {
        return dimension(format!("input has length {}, expected d={}", x.len(), spec.d));
    }
    Ok(CorrectedKernel::new(spec, a, t, corrector)?.eval(x))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::polyspace::CorrectorConfig;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn constants_match_closed_forms() {
        let (case, c, _) = greens_constant(2.0, 1).unwrap();
        assert_eq!(case, GreensCase::Power);
        assert!(rel(c, -0.5) < 1e-14);

        let (case, c, mp) = greens_constant(4.0, 2).unwrap();
        assert_eq!((case, mp), (GreensCase::PowerLog, 1));
        assert!(rel(c, 1.0 / (8.0 * PI)) < 1e-14);

        let (case, c, _) = greens_constant(3.0, 2).unwrap();
        assert_eq!(case, GreensCase::Power);
        assert!(rel(c, -1.0 / (2.0 * PI)) < 1e-14);

        // (3, 1): α - m = 2, log branch with B_{1,1} = 1/(2π)
        let (case, c, mp) = greens_constant(3.0, 1).unwrap();
        assert_eq!((case, mp), (GreensCase::PowerLog, 1));
        assert!(rel(c, 1.0 / (2.0 * PI)) < 1e-14);
    }

    #[test]
    fn rejects_alpha_not_above_arity() {
        assert!(greens_constant(2.0, 2).is_err());
        assert!(greens_constant(1.0, 2).is_err());
        assert!(greens_constant(-2.0, 1).is_err());
    }

    #[test]
    fn rho_examples() {
        let p = GreensProfile::new(2.0, 1).unwrap();
        assert!(rel(rho(&p, &[4.0]), -2.0) < 1e-13);
        let p = GreensProfile::new(3.0, 2).unwrap();
        assert!(rel(rho(&p, &[3.0, 4.0]), -5.0 / (2.0 * PI)) < 1e-14);
        for (alpha, m) in [(2.0, 1), (4.0, 2), (3.0, 1), (2.5, 2)] {
            let p = GreensProfile::new(alpha, m).unwrap();
            assert_eq!(rho(&p, &vec![0.0; m]), 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (alpha, m) in [(3.0, 2), (4.0, 2), (2.5, 1), (3.0, 1)] {
            let p = GreensProfile::new(alpha, m).unwrap();
            let t: Vec<f64> = (0..m).map(|i| 0.7 - 0.45 * i as f64).collect();
            let g = rho_gradient(&p, &t);
            for i in 0..m {
                let h = 1e-6;
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp[i] += h;
                tm[i] -= h;
                let fd = (rho(&p, &tp) - rho(&p, &tm)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-8, "({alpha},{m}) axis {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn relu_alias_differs_by_affine_term() {
        let p = GreensProfile::new(2.0, 1).unwrap();
        let alias = ActivationAlias::Relu;
        alias.check(&p).unwrap();
        for &t in &[-3.0, -0.2, 0.0, 0.5, 7.0] {
            let diff = alias.eval(&[t]) - alias.sign_relative_to_rho() * rho(&p, &[t]);
            assert!((diff - t / 2.0).abs() < 1e-14);
        }
        assert!(alias.check(&GreensProfile::new(3.0, 2).unwrap()).is_err());
    }

    #[test]
    fn weak_identity_certifies_constants() {
        let p = GreensProfile::new(2.0, 1).unwrap();
        let r = weak_identity_default(&p).unwrap();
        assert!(r <= 1e-3, "residual {r}");

        // A wrong constant is exposed: doubling gives a residual of about φ(0).
        let doubled = p.with_constant(2.0 * p.constant);
        let r = weak_identity_default(&doubled).unwrap();
        assert!((r - 1.0).abs() <= 0.1, "residual {r}");
    }

    #[test]
    fn weak_identity_all_builtin_pairs_and_refinement() {
        for (alpha, m) in [(2.0, 1), (3.0, 1), (4.0, 1), (3.0, 2), (4.0, 2)] {
            let p = GreensProfile::new(alpha, m).unwrap();
            let cfg = WeakIdentityConfig::default_for(&p);
            let coarse = weak_identity_with(&p, &cfg).unwrap();
            let fine = weak_identity_with(
                &p,
                &WeakIdentityConfig { points_per_axis: 2 * cfg.points_per_axis, ..cfg },
            )
            .unwrap();
            eprintln!("alpha={alpha} m={m}: {coarse:.3e} -> {fine:.3e}");
            assert!(coarse <= 1e-3);
            if alpha == 4.0 && m == 1 {
                // Polynomial-times-Gaussian products are integrated to
                // roundoff; there is nothing left to refine.
                assert!(fine <= 1e-9);
            } else {
                assert!(fine < coarse);
            }
        }
    }

    #[test]
    fn weak_identity_rejects_truncated_test_function() {
        let p = GreensProfile::new(2.0, 1).unwrap();
        let mut cfg = WeakIdentityConfig::default_for(&p);
        cfg.extent_sigmas = 3.0;
        assert!(matches!(weak_identity_with(&p, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn laplacian_power_test_functions() {
        // (-Δ)^2 G at the origin in m dims is m(m+2)
        for m in 1..=3 {
            let t = TestFunction { sigma: 1.0, laplacian_power: 2 };
            assert!((t.eval(&vec![0.0; m]) - (m * (m + 2)) as f64).abs() < 1e-14);
        }
        // (-Δ) G via second differences in 1D
        let g = TestFunction::gaussian(1.3);
        let l = TestFunction { sigma: 1.3, laplacian_power: 1 };
        let (x, h) = (0.4, 1e-4);
        let fd = -(g.eval(&[x + h]) - 2.0 * g.eval(&[x]) + g.eval(&[x - h])) / (h * h);
        assert!((fd - l.eval(&[x])).abs() < 1e-6);
    }

    #[test]
    fn kernel_without_null_space_is_rho() {
        let corrector = PolyCorrector::build(1, -1, &CorrectorConfig::default_for(1)).unwrap();
        let profile = GreensProfile::new(2.0, 1).unwrap();
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = CorrectedKernel::from_profile(profile, &a, &[0.3], &corrector).unwrap();
        for &x in &[-2.0, 0.0, 1.7] {
            assert_eq!(k.eval(&[x]), rho(&profile, &[x - 0.3]));
        }
    }

    #[test]
    fn kernel_rejects_mismatched_corrector() {
        let spec = OperatorSpec::fractional_laplacian(2.0, 2, 1).unwrap();
        let corrector = PolyCorrector::build(1, 1, &CorrectorConfig::default_for(1)).unwrap();
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(kernel_g(&spec, &a, &[0.0], &[0.0, 0.0], &corrector).is_err());
    }
}
