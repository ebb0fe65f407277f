//! The heat semigroup `S(t) = e^{t Delta}` on the periodic box.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{weighted_norm, WeightSpec};
use crate::grid::{Grid, GridField};
use crate::spectral;

/// Number of kernel standard deviations kept by the convolution method.
pub const KERNEL_TRUNCATION_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatMethod {
    SpectralMultiplier,
    GaussianConvolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatParams {
    pub t: f64,
    pub method: HeatMethod,
}

impl HeatParams {
    pub fn spectral(t: f64) -> Self {
        Self { t, method: HeatMethod::SpectralMultiplier }
    }

    pub fn convolution(t: f64) -> Self {
        Self { t, method: HeatMethod::GaussianConvolution }
    }
}

/// Applies `S(t)` componentwise.
pub fn heat_apply(u: &GridField, hp: &HeatParams) -> Result<GridField> {
    if hp.t < 0.0 {
        return Err(Error::NegativeTime(hp.t));
    }
    if !hp.t.is_finite() {
        return Err(Error::InvalidParameter(format!("diffusion time {} not finite", hp.t)));
    }
    if hp.t == 0.0 {
        return Ok(u.clone());
    }
    let grid = *u.grid();
    let h = grid.spacing();
    let use_convolution = hp.method == HeatMethod::GaussianConvolution && hp.t >= h * h / 10.0;
    let values = (0..u.num_components())
        .flat_map(|c| {
            if use_convolution {
                convolve(&grid, u.component(c), hp.t)
            } else {
                spectral::apply_multiplier(&grid, u.component(c), |idx| {
                    Complex64::new((-hp.t * spectral::wavenumber_sq(&grid, idx)).exp(), 0.0)
                })
            }
        })
        .collect();
    let out = GridField::new(grid, u.rank(), values)?;
    Ok(out)
}

/// Periodized, truncated and normalized one-dimensional heat kernel sampled
/// at lattice offsets `0..N`.
fn periodic_kernel(grid: &Grid, t: f64) -> Vec<f64> {
    let n = grid.points_per_axis();
    let h = grid.spacing();
    let period = 2.0 * grid.half_width();
    let radius = KERNEL_TRUNCATION_SIGMAS * (2.0 * t).sqrt();
    let images = (radius / period).ceil() as i64 + 1;
    let mut kernel = vec![0.0; n];
    for (j, kj) in kernel.iter_mut().enumerate() {
        let offset = j as f64 * h;
        for m in -images..=images {
            let x = offset + m as f64 * period;
            if x.abs() <= radius {
                *kj += (-x * x / (4.0 * t)).exp();
            }
        }
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    kernel
}

/// Separable direct convolution with the periodized Gaussian.
fn convolve(grid: &Grid, data: &[f64], t: f64) -> Vec<f64> {
    let n = grid.points_per_axis();
    let kernel = periodic_kernel(grid, t);
    let support: Vec<usize> = (0..n).filter(|&j| kernel[j] > 0.0).collect();
    let mut current = data.to_vec();
    let mut line = vec![0.0; n];
    for axis in 0..grid.dim() {
        let stride = grid.stride(axis);
        let block = n * stride;
        let mut next = vec![0.0; current.len()];
        for outer in (0..current.len()).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = current[base + k * stride];
                }
                for i in 0..n {
                    let mut acc = 0.0;
                    for &j in &support {
                        acc += kernel[j] * line[(i + n - j) % n];
                    }
                    next[base + i * stride] = acc;
                }
            }
        }
        current = next;
    }
    current
}

/// Returns `(t, ||S(t)u||_w / (1+t)^{|delta|/2})` for every `t` in `t_grid`.
pub fn heat_growth_probe(u: &GridField, w: &WeightSpec, t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_time_grid(t_grid)?;
    t_grid
        .iter()
        .map(|&t| {
            let flowed = heat_apply(u, &HeatParams::spectral(t))?;
            Ok((t, weighted_norm(&flowed, w)? / growth_factor(t, w.delta)))
        })
        .collect()
}

pub(crate) fn growth_factor(t: f64, delta: f64) -> f64 {
    (1.0 + t).powf(delta.abs() / 2.0)
}

pub(crate) fn check_time_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidParameter("time grid must be finite and nonnegative".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("time grid must be sorted".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian_1d(n: usize, l: f64, var: f64) -> GridField {
        let g = Grid::new(1, n, l).unwrap();
        GridField::from_scalar_fn(g, |x| (-x[0] * x[0] / (2.0 * var)).exp()).unwrap()
    }

    #[test]
    fn zero_time_is_bitwise_identity() {
        let u = gaussian_1d(64, 10.0, 1.0);
        assert_eq!(heat_apply(&u, &HeatParams::spectral(0.0)).unwrap(), u);
        assert!(matches!(heat_apply(&u, &HeatParams::spectral(-1.0)), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn gaussian_spreads_in_closed_form() {
        let var = 1.0;
        let t = 0.7;
        let u = gaussian_1d(256, 20.0, var);
        let grid = *u.grid();
        let s2 = var + 2.0 * t;
        let exact = GridField::from_scalar_fn(grid, |x| (var / s2).sqrt() * (-x[0] * x[0] / (2.0 * s2)).exp()).unwrap();
        for method in [HeatMethod::SpectralMultiplier, HeatMethod::GaussianConvolution] {
            let out = heat_apply(&u, &HeatParams { t, method }).unwrap();
            let rel = out.sub(&exact).unwrap().l2_norm() / exact.l2_norm();
            assert!(rel < 1e-8, "{method:?}: {rel}");
        }
    }

    #[test]
    fn fourier_mode_scales_by_multiplier() {
        let l = PI;
        let g = Grid::new(2, 32, l).unwrap();
        let (k0, k1) = (3.0, 2.0);
        let u = GridField::from_vector_fn(g, |x, o| {
            o[0] = (k0 * x[0] + k1 * x[1]).cos();
            o[1] = (k0 * x[0] + k1 * x[1]).sin();
        })
        .unwrap();
        let t = 0.05;
        let out = heat_apply(&u, &HeatParams::spectral(t)).unwrap();
        let expected = u.scaled((-t * (k0 * k0 + k1 * k1)).exp());
        assert!(out.sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn methods_agree_above_resolution_threshold() {
        let g = Grid::new(2, 64, 6.0).unwrap();
        let u = GridField::from_scalar_fn(g, |x| {
            (-(x[0] - 0.5).powi(2) - 2.0 * x[1] * x[1]).exp() * (1.0 + 0.3 * x[0].sin())
        })
        .unwrap();
        let h2 = g.spacing().powi(2);
        for t in [h2, 4.0 * h2, 0.5, 3.0] {
            let a = heat_apply(&u, &HeatParams::spectral(t)).unwrap();
            let b = heat_apply(&u, &HeatParams::convolution(t)).unwrap();
            let rel = a.sub(&b).unwrap().l2_norm() / a.l2_norm();
            assert!(rel < 1e-10, "t = {t}: {rel}");
        }
    }

    #[test]
    fn growth_probe_of_zero_is_zero() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let w = WeightSpec::new(0, 2.0, 1.0).unwrap();
        let r = heat_growth_probe(&GridField::zeros(g, 0), &w, &[0.0, 1.0, 10.0]).unwrap();
        assert!(r.iter().all(|(_, v)| *v == 0.0));
        assert!(heat_growth_probe(&GridField::zeros(g, 0), &w, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn unweighted_ratio_is_non_increasing() {
        let g = Grid::new(2, 128, 32.0).unwrap();
        let u = GridField::from_scalar_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp()).unwrap();
        let w = WeightSpec::new(0, 2.0, 0.0).unwrap();
        let r = heat_growth_probe(&u, &w, &[0.0, 0.5, 1.0, 2.0, 5.0, 10.0]).unwrap();
        for pair in r.windows(2) {
            assert!(pair[1].1 <= pair[0].1 * (1.0 + 1e-12));
        }
    }
}
