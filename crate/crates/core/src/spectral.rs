//! FFT plumbing shared by the differential operators, the heat semigroup and
//! the trigonometric interpolator.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::grid::Grid;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform(grid: &Grid, buf: &mut [Complex64], direction: FftDirection) {
    let n = grid.points_per_axis();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction));
    let len = buf.len();
    let mut line = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for axis in 0..grid.dim() {
        let stride = grid.stride(axis);
        if stride == 1 {
            fft.process_with_scratch(buf, &mut scratch);
            continue;
        }
        let block = n * stride;
        for outer in (0..len).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = buf[base + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (k, value) in line.iter().enumerate() {
                    buf[base + k * stride] = *value;
                }
            }
        }
    }
}

/// Unnormalized forward DFT of a real array on `grid`.
pub(crate) fn forward(grid: &Grid, data: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    transform(grid, &mut buf, FftDirection::Forward);
    buf
}

/// Inverse DFT (normalized) keeping the real part.
pub(crate) fn inverse_real(grid: &Grid, mut spec: Vec<Complex64>) -> Vec<f64> {
    transform(grid, &mut spec, FftDirection::Inverse);
    let scale = 1.0 / grid.len() as f64;
    spec.into_iter().map(|z| z.re * scale).collect()
}

/// Per-axis FFT indices of every flat spectral index, visited in order.
pub(crate) fn for_each_mode(grid: &Grid, mut f: impl FnMut(usize, [usize; 3])) {
    for flat in 0..grid.len() {
        f(flat, grid.unflatten(flat));
    }
}

/// `|k|^2` with the Nyquist mode kept, as used by even-order operators.
pub(crate) fn wavenumber_sq(grid: &Grid, idx: [usize; 3]) -> f64 {
    (0..grid.dim()).map(|a| grid.wavenumber(idx[a]).powi(2)).sum()
}

/// Applies a Fourier multiplier to a real array.
pub(crate) fn apply_multiplier(grid: &Grid, data: &[f64], multiplier: impl Fn([usize; 3]) -> Complex64) -> Vec<f64> {
    let mut spec = forward(grid, data);
    for_each_mode(grid, |flat, idx| spec[flat] *= multiplier(idx));
    inverse_real(grid, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_3d() {
        let g = Grid::new(3, 8, 1.0).unwrap();
        let data: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let back = inverse_real(&g, forward(&g, &data));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mode_lands_in_expected_bin() {
        let g = Grid::new(2, 16, std::f64::consts::PI).unwrap();
        let data: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = g.point(i);
                (2.0 * (x[0] + g.half_width())).cos()
            })
            .collect();
        let spec = forward(&g, &data);
        // mode (2, 0): flat index 2*16
        assert!((spec[2 * 16].re - 128.0).abs() < 1e-9);
        assert!((spec[14 * 16].re - 128.0).abs() < 1e-9);
    }
}
