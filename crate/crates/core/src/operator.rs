//! Regularization operators and the constants of the k-plane calculus.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `(-Δ)^{α/2}`, radial profile `|ω|^α`.
    FractionalLaplacian,
}

/// An isotropic regularization operator together with the plane geometry
/// `(d, k)` it is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct OperatorSpec {
    pub family: Family,
    pub alpha: f64,
    pub d: usize,
    pub k: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    family: Family,
    alpha: f64,
    d: usize,
    k: usize,
}

impl TryFrom<RawSpec> for OperatorSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        OperatorSpec::new(raw.family, raw.alpha, raw.d, raw.k)
    }
}

impl OperatorSpec {
    /// Checks the structural invariants only; admissibility is reported by
    /// [`check_admissibility`].
    pub fn new(family: Family, alpha: f64, d: usize, k: usize) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return domain(format!("operator order must be positive and finite, got {alpha}"));
        }
        if d == 0 {
            return domain("ambient dimension must be at least 1");
        }
        if k >= d {
            return domain(format!("plane index k={k} must satisfy 0 <= k < d={d}"));
        }
        Ok(Self { family, alpha, d, k })
    }

    pub fn fractional_laplacian(alpha: f64, d: usize, k: usize) -> Result<Self> {
        Self::new(Family::FractionalLaplacian, alpha, d, k)
    }

    /// Arity of the nonlinearity, `d - k`.
    pub fn m(&self) -> usize {
        self.d - self.k
    }

    /// Largest polynomial degree annihilated by the operator.
    pub fn n_l(&self) -> i64 {
        match self.family {
            Family::FractionalLaplacian => self.alpha.ceil() as i64 - 1,
        }
    }

    /// Order of the zero of the radial profile at the origin.
    pub fn gamma_l(&self) -> f64 {
        match self.family {
            Family::FractionalLaplacian => self.alpha,
        }
    }

    /// Growth exponent of the radial profile at infinity.
    pub fn gamma_l_prime(&self) -> f64 {
        match self.family {
            Family::FractionalLaplacian => self.alpha,
        }
    }

    pub fn is_admissible(&self) -> bool {
        check_admissibility(self).ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub ok: bool,
    pub n_l: i64,
    pub gamma_l: f64,
    pub gamma_l_prime: f64,
    pub messages: Vec<String>,
}

pub fn check_admissibility(spec: &OperatorSpec) -> AdmissibilityReport {
    let n_l = spec.n_l();
    let gamma_l = spec.gamma_l();
    let gamma_l_prime = spec.gamma_l_prime();
    let codim = spec.m() as f64;
    let mut messages = Vec::new();

    if !(gamma_l > n_l as f64 && gamma_l <= n_l as f64 + 1.0) {
        messages.push(format!(
            "zero order {gamma_l} at the origin is not in (n_L, n_L + 1] = ({n_l}, {}]",
            n_l + 1
        ));
    }
    if gamma_l <= codim {
        messages.push(format!(
            "zero of order {gamma_l} at the origin must exceed d - k = {codim} \
             (the inverse symbol is not locally integrable on the {codim}-dimensional offset space)"
        ));
    }
    if gamma_l_prime <= codim {
        messages.push(format!(
            "growth exponent {gamma_l_prime} must exceed d - k = {codim}"
        ));
    }
    if n_l < 0 {
        messages.push(format!("annihilated degree n_L = {n_l} is negative"));
    }

    AdmissibilityReport {
        ok: messages.is_empty(),
        n_l,
        gamma_l,
        gamma_l_prime,
        messages,
    }
}

/// Radial frequency profile of the operator.
pub fn radial_symbol(spec: &OperatorSpec, omega: f64) -> f64 {
    match spec.family {
        Family::FractionalLaplacian => omega.abs().powf(spec.alpha),
    }
}

/// Surface area of the unit sphere `S^{m-1}` in `R^m`.
pub fn sphere_area(m: i64) -> Result<f64> {
    if m < 1 {
        return domain(format!("sphere area needs m >= 1, got {m}"));
    }
    Ok(2.0 * pi_pow_half(m as u32) / gamma_fn(m as f64 / 2.0))
}

/// `π^{m/2}`, with `√π` taken from `sqrt` so products cancel cleanly.
pub(crate) fn pi_pow_half(m: u32) -> f64 {
    let whole = PI.powi((m / 2) as i32);
    if m % 2 == 1 {
        whole * PI.sqrt()
    } else {
        whole
    }
}

/// `Γ(x)`, exact to rounding at integers and half-integers (where all the
/// constants of this crate live) and from `statrs` elsewhere.
pub(crate) fn gamma_fn(x: f64) -> f64 {
    let twice = 2.0 * x;
    if twice.fract() != 0.0 || twice.abs() > 200.0 {
        return gamma(x);
    }
    if x <= 0.0 && x.fract() == 0.0 {
        return f64::NAN;
    }
    // Recur up to (0, 1] then apply Γ(1) = 1 or Γ(1/2) = √π.
    let mut shift = x;
    let mut factor = 1.0;
    while shift <= 0.0 {
        factor /= shift;
        shift += 1.0;
    }
    let base = if shift.fract() == 0.0 { 1.0 } else { PI.sqrt() };
    let mut y = shift - shift.floor() + if shift.fract() == 0.0 { 1.0 } else { 0.0 };
    let mut value = base;
    while y < shift {
        value *= y;
        y += 1.0;
    }
    value * factor
}

/// Constant `c_{d,k}` of the filter `K_{d-k}` that inverts `R_k* R_k`.
///
/// At `k = 0` the Haar measure on `O_d` is taken to be a probability measure
/// and the constant is 1.
pub fn backprojection_constant(d: usize, k: usize) -> Result<f64> {
    if k >= d {
        return domain(format!("backprojection constant needs 0 <= k < d, got d={d}, k={k}"));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let (d, k) = (d as i64, k as i64);
    let mut denom = sphere_area(d - k)?;
    for n in k..d {
        denom *= sphere_area(n)?;
    }
    Ok((2.0 * PI).powi(-(k as i32)) * sphere_area(k)? / denom)
}

/// Total mass `∏_{n=k+1}^{d} |S^{n-1}|` of the unnormalized Haar measure on
/// the Stiefel manifold `V_{d-k}(R^d)`.
///
/// `backprojection_constant` for `k >= 1` is calibrated against this
/// measure, whereas [`crate::kplane::DirectionDesign`] weights sum to one.
/// The inversion identity with probability weights therefore reads
/// `stiefel_volume · R* K R = Id`.
pub fn stiefel_volume(d: usize, k: usize) -> Result<f64> {
    if k >= d {
        return domain(format!("Stiefel volume needs 0 <= k < d, got d={d}, k={k}"));
    }
    let mut vol = 1.0;
    for n in (k + 1)..=d {
        vol *= sphere_area(n as i64)?;
    }
    Ok(vol)
}

/// Scale that turns a probability-weighted `R* K R` into the identity.
pub fn inversion_scale(d: usize, k: usize) -> Result<f64> {
    if k == 0 {
        Ok(1.0)
    } else {
        stiefel_volume(d, k)
    }
}

/// Dimension of the space of polynomials of degree at most `n_l` in `d`
/// variables; zero for `n_l = -1`.
pub fn null_space_dim(d: usize, n_l: i64) -> usize {
    if n_l < 0 {
        return 0;
    }
    // C(n_l + d, d) computed incrementally; every partial product is an integer.
    let n = n_l as u128;
    let mut acc: u128 = 1;
    for i in 1..=d as u128 {
        acc = acc * (n + i) / i;
    }
    acc as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn admissibility_examples() {
        let r = check_admissibility(&OperatorSpec::fractional_laplacian(2.0, 2, 1).unwrap());
        assert!(r.ok);
        assert_eq!(r.n_l, 1);
        assert_eq!(r.gamma_l, 2.0);

        let r = check_admissibility(&OperatorSpec::fractional_laplacian(2.0, 3, 0).unwrap());
        assert!(!r.ok);
        assert!(r.messages.iter().any(|m| m.contains("d - k = 3")));

        let r = check_admissibility(&OperatorSpec::fractional_laplacian(4.0, 2, 0).unwrap());
        assert!(r.ok);
        assert_eq!(r.n_l, 3);
        assert_eq!(r.gamma_l, 4.0);

        let r = check_admissibility(&OperatorSpec::fractional_laplacian(2.5, 2, 0).unwrap());
        assert!(r.ok);
        assert_eq!(r.n_l, 2);
    }

    #[test]
    fn structural_invariants_rejected() {
        assert!(OperatorSpec::fractional_laplacian(2.0, 2, 2).is_err());
        assert!(OperatorSpec::fractional_laplacian(0.0, 2, 1).is_err());
        assert!(OperatorSpec::fractional_laplacian(2.0, 0, 0).is_err());
    }

    #[test]
    fn radial_symbol_examples() {
        let s2 = OperatorSpec::fractional_laplacian(2.0, 2, 1).unwrap();
        let s3 = OperatorSpec::fractional_laplacian(3.0, 3, 1).unwrap();
        assert_eq!(radial_symbol(&s2, 0.0), 0.0);
        assert!(rel(radial_symbol(&s2, 3.0), 9.0) < 1e-15);
        assert!(rel(radial_symbol(&s3, 2.0), 8.0) < 1e-15);
    }

    #[test]
    fn radial_symbol_zero_order_at_origin() {
        for &(alpha, d, k) in &[(2.0, 2, 1), (4.0, 2, 0), (2.5, 3, 1), (3.0, 3, 1)] {
            let spec = OperatorSpec::fractional_laplacian(alpha, d, k).unwrap();
            for &w in &[1e-1, 1e-3, 1e-6] {
                let ratio = radial_symbol(&spec, w) / w.powf(spec.gamma_l());
                assert!((ratio - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn sphere_areas() {
        assert!(rel(sphere_area(1).unwrap(), 2.0) < 1e-14);
        assert!(rel(sphere_area(2).unwrap(), 2.0 * PI) < 1e-14);
        assert!(rel(sphere_area(3).unwrap(), 4.0 * PI) < 1e-14);
        // |S^3| = 2π², |S^4| = 8π²/3
        assert!(rel(sphere_area(4).unwrap(), 2.0 * PI * PI) < 1e-14);
        assert!(rel(sphere_area(5).unwrap(), 8.0 * PI * PI / 3.0) < 1e-14);
        assert!(sphere_area(0).is_err());
    }

    #[test]
    fn exact_gamma_values() {
        let sp = PI.sqrt();
        for (x, g) in [(1.0, 1.0), (5.0, 24.0), (0.5, sp), (2.5, 0.75 * sp), (-0.5, -2.0 * sp), (-1.5, 4.0 / 3.0 * sp)] {
            assert!(rel(gamma_fn(x), g) < 1e-15, "Γ({x})");
        }
        assert!(rel(gamma_fn(0.3), gamma(0.3)) < 1e-15);
        assert!(gamma_fn(-2.0).is_nan());
    }

    #[test]
    fn backprojection_constants() {
        assert!(rel(backprojection_constant(2, 1).unwrap(), 1.0 / (4.0 * PI)) < 1e-14);
        assert!(rel(backprojection_constant(3, 2).unwrap(), 1.0 / (8.0 * PI * PI)) < 1e-14);
        assert_eq!(backprojection_constant(3, 0).unwrap(), 1.0);
        assert!(backprojection_constant(3, 3).is_err());
        for d in 2..=4usize {
            let expected = 1.0 / (2.0 * (2.0 * PI).powi(d as i32 - 1));
            assert!(rel(backprojection_constant(d, d - 1).unwrap(), expected) < 1e-13);
        }
    }

    #[test]
    fn effective_inversion_constants_match_classical_radon() {
        // d=2 lines: f = (1/2) mean_θ (|ω| R f)(θ, θ·x)
        let c = backprojection_constant(2, 1).unwrap() * stiefel_volume(2, 1).unwrap();
        assert!(rel(c, 0.5) < 1e-14);
        // d=3 planes: f = (1/(2π)) mean_θ (|ω|² R f)(θ, θ·x)
        let c = backprojection_constant(3, 2).unwrap() * stiefel_volume(3, 2).unwrap();
        assert!(rel(c, 1.0 / (2.0 * PI)) < 1e-14);
        // d=3 lines (X-ray): f = (1/π) mean (|ω| P f)
        let c = backprojection_constant(3, 1).unwrap() * stiefel_volume(3, 1).unwrap();
        assert!(rel(c, 1.0 / PI) < 1e-14);
    }

    #[test]
    fn null_space_dims() {
        assert_eq!(null_space_dim(2, 1), 3);
        assert_eq!(null_space_dim(5, -1), 0);
        // brute-force count of multi-indices with |n| <= 3 in d = 2
        let brute = (0..=3).flat_map(|a| (0..=3).map(move |b| a + b)).filter(|&s| s <= 3).count();
        assert_eq!(null_space_dim(2, 3), brute);
        assert_eq!(null_space_dim(2, 3), 10);
        for d in 1..5 {
            for n in -1..6 {
                assert!(null_space_dim(d, n) <= null_space_dim(d, n + 1));
            }
        }
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let spec = OperatorSpec::fractional_laplacian(2.5, 3, 1).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"family":"fractional_laplacian","alpha":2.5,"d":3,"k":1}"#);
        let back: OperatorSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<OperatorSpec>(
            r#"{"family":"bessel","alpha":2,"d":2,"k":1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<OperatorSpec>(
            r#"{"family":"fractional_laplacian","alpha":2,"d":2,"k":2}"#
        )
        .is_err());
    }
}
