//! The one place that maps DFTs onto the continuous Fourier transform.
//!
//! Convention: `f̂(ω) = ∫ f(x) e^{-i ω·x} dx` and
//! `f(x) = (2π)^{-n} ∫ f̂(ω) e^{i ω·x} dω`. Samples live on a row-major
//! uniform grid `x_j = origin + j · spacing` (per axis). With that layout
//! `f̂(ω_k) ≈ (∏ spacing) · e^{-i ω_k·origin} · DFT[f]_k`, where `ω_k` are the
//! angular DFT frequencies returned by [`angular_frequencies`].

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Angular frequencies `2π · fftfreq(n, spacing)` in DFT order.
pub fn angular_frequencies(n: usize, spacing: f64) -> Vec<f64> {
    let scale = 2.0 * PI / (n as f64 * spacing);
    (0..n)
        .map(|k| {
            let signed = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
            signed * scale
        })
        .collect()
}

/// Unnormalized in-place DFT along every axis of a row-major array.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    assert_eq!(data.len(), total, "buffer does not match shape");
    let mut planner = FftPlanner::new();
    let mut line = Vec::new();
    for axis in 0..shape.len() {
        let n = shape[axis];
        if n <= 1 {
            continue;
        }
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let stride: usize = shape[axis + 1..].iter().product();
        let outer = total / (n * stride);
        line.resize(n, Complex64::new(0.0, 0.0));
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + i * stride];
                }
                fft.process(&mut line);
                for (i, value) in line.iter().enumerate() {
                    data[base + i * stride] = *value;
                }
            }
        }
    }
}

/// Calls `f(flat_index, multi_index)` for every entry of a row-major array.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        f(flat, &idx);
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Samples of the continuous transform at the DFT frequency grid.
pub fn continuous_forward(
    values: &[f64],
    shape: &[usize],
    origin: &[f64],
    spacing: &[f64],
) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut data, shape, false);
    let freqs: Vec<Vec<f64>> =
        shape.iter().zip(spacing).map(|(&n, &h)| angular_frequencies(n, h)).collect();
    let cell: f64 = spacing.iter().product();
    for_each_index(shape, |flat, idx| {
        let phase: f64 = idx.iter().enumerate().map(|(a, &i)| freqs[a][i] * origin[a]).sum();
        data[flat] *= Complex64::from_polar(cell, -phase);
    });
    data
}

/// Inverse of [`continuous_forward`]: spatial samples of the function whose
/// continuous transform has the given values on the DFT frequency grid.
pub fn continuous_inverse(
    spectrum: &[Complex64],
    shape: &[usize],
    origin: &[f64],
    spacing: &[f64],
) -> Vec<Complex64> {
    let freqs: Vec<Vec<f64>> =
        shape.iter().zip(spacing).map(|(&n, &h)| angular_frequencies(n, h)).collect();
    let period: f64 = shape.iter().zip(spacing).map(|(&n, &h)| n as f64 * h).product();
    let mut data = spectrum.to_vec();
    for_each_index(shape, |flat, idx| {
        let phase: f64 = idx.iter().enumerate().map(|(a, &i)| freqs[a][i] * origin[a]).sum();
        data[flat] *= Complex64::from_polar(1.0 / period, phase);
    });
    fft_nd(&mut data, shape, true);
    data
}

/// Applies the Fourier multiplier `symbol(ω)` to real samples and returns the
/// real part together with the largest discarded imaginary magnitude.
///
/// The grid origin cancels between the forward and inverse phases, so only
/// the spacing matters.
pub fn apply_multiplier(
    values: &[f64],
    shape: &[usize],
    spacing: &[f64],
    symbol: impl Fn(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut data, shape, false);
    let freqs: Vec<Vec<f64>> =
        shape.iter().zip(spacing).map(|(&n, &h)| angular_frequencies(n, h)).collect();
    let mut omega = vec![0.0; shape.len()];
    for_each_index(shape, |flat, idx| {
        for (a, &i) in idx.iter().enumerate() {
            omega[a] = freqs[a][i];
        }
        data[flat] *= symbol(&omega);
    });
    fft_nd(&mut data, shape, true);
    let n = data.len() as f64;
    let mut max_imag: f64 = 0.0;
    let out = data
        .iter()
        .map(|z| {
            max_imag = max_imag.max((z.im / n).abs());
            z.re / n
        })
        .collect();
    (out, max_imag)
}

/// Direct evaluation of the discretized continuous transform
/// `(∏ spacing) Σ_j f(x_j) e^{-i ξ·x_j}` at an arbitrary frequency `xi`.
///
/// Separable phases keep the cost at one multiply-add per sample.
pub fn dtft_at(
    values: &[f64],
    shape: &[usize],
    origin: &[f64],
    spacing: &[f64],
    xi: &[f64],
) -> Complex64 {
    let phases: Vec<Vec<Complex64>> = shape
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            (0..n)
                .map(|j| Complex64::from_polar(1.0, -xi[a] * (origin[a] + j as f64 * spacing[a])))
                .collect()
        })
        .collect();
    let last = shape.len() - 1;
    let n_last = shape[last];
    let mut total = Complex64::new(0.0, 0.0);
    let outer_shape = &shape[..last];
    let mut prefix = Complex64::new(1.0, 0.0);
    for_each_index(outer_shape, |flat, idx| {
        prefix = Complex64::new(1.0, 0.0);
        for (a, &i) in idx.iter().enumerate() {
            prefix *= phases[a][i];
        }
        let row = &values[flat * n_last..(flat + 1) * n_last];
        let mut acc = Complex64::new(0.0, 0.0);
        for (v, p) in row.iter().zip(&phases[last]) {
            acc += p * *v;
        }
        total += prefix * acc;
    });
    let cell: f64 = spacing.iter().product();
    total * cell
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_grid(n: usize, x0: f64, h: f64, shift: f64) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let x = x0 + j as f64 * h - shift;
                (-x * x / 2.0).exp()
            })
            .collect()
    }

    #[test]
    fn frequencies_follow_fftfreq() {
        let f = angular_frequencies(4, 0.5);
        let s = 2.0 * PI / 2.0;
        assert_eq!(f, vec![0.0, s, -2.0 * s, -s]);
        let f = angular_frequencies(5, 1.0);
        let s = 2.0 * PI / 5.0;
        assert_eq!(f, vec![0.0, s, 2.0 * s, -2.0 * s, -s]);
    }

    #[test]
    fn forward_matches_gaussian_transform_with_offset_origin() {
        // ∫ e^{-(x-c)²/2} e^{-iωx} dx = √(2π) e^{-ω²/2} e^{-iωc}
        let (n, x0, h, c) = (256, -13.0, 0.1, 0.7);
        let vals = gaussian_grid(n, x0, h, c);
        let spec = continuous_forward(&vals, &[n], &[x0], &[h]);
        let freqs = angular_frequencies(n, h);
        for (w, z) in freqs.iter().zip(&spec) {
            let exact = Complex64::from_polar((2.0 * PI).sqrt() * (-w * w / 2.0).exp(), -w * c);
            assert!((z - exact).norm() < 1e-12, "ω={w}: {z} vs {exact}");
        }
        let back = continuous_inverse(&spec, &[n], &[x0], &[h]);
        for (b, v) in back.iter().zip(&vals) {
            assert!((b.re - v).abs() < 1e-13 && b.im.abs() < 1e-13);
        }
    }

    #[test]
    fn dtft_agrees_with_fft_on_grid_frequencies() {
        let shape = [24, 20];
        let origin = [-3.0, -2.5];
        let spacing = [0.25, 0.3];
        let vals: Vec<f64> = (0..480).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        let spec = continuous_forward(&vals, &shape, &origin, &spacing);
        let f0 = angular_frequencies(24, 0.25);
        let f1 = angular_frequencies(20, 0.3);
        for &(i, j) in &[(0, 0), (3, 7), (13, 19), (23, 1)] {
            let direct = dtft_at(&vals, &shape, &origin, &spacing, &[f0[i], f1[j]]);
            assert!((direct - spec[i * 20 + j]).norm() < 1e-10);
        }
    }

    #[test]
    fn second_derivative_multiplier() {
        // symbol ω² is -d²/dx²: -(x² - 1) e^{-x²/2}
        let (n, x0, h) = (512, -20.0, 40.0 / 512.0);
        let vals = gaussian_grid(n, x0, h, 0.0);
        let (out, imag) = apply_multiplier(&vals, &[n], &[h], |w| w[0] * w[0]);
        assert!(imag < 1e-12);
        for (j, o) in out.iter().enumerate() {
            let x = x0 + j as f64 * h;
            let exact = -(x * x - 1.0) * (-x * x / 2.0).exp();
            assert!((o - exact).abs() < 1e-10);
        }
    }
}
