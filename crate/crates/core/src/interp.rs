//! Periodic evaluation of grid fields at off-grid points.
//!
//! Positions are expressed in index units along each axis: position `p`
//! corresponds to the physical coordinate `-L + p h`. Working in index
//! units keeps evaluation at a grid point exact for the cubic scheme.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Tensor-product four-point Lagrange interpolation.
    #[default]
    Cubic,
    /// Direct evaluation of the trigonometric interpolant.
    Trigonometric,
}

/// Fractional offsets this close to a lattice node snap onto it.
const SNAP: f64 = 1e-13;

/// Maximum number of components a sampler evaluates at once.
pub const MAX_COMPONENTS: usize = 9;

pub(crate) struct Sampler<'a> {
    grid: Grid,
    kind: Kind<'a>,
}

enum Kind<'a> {
    Cubic(Vec<&'a [f64]>),
    Trig(Vec<Vec<Complex64>>),
}

impl<'a> Sampler<'a> {
    pub fn new(grid: Grid, comps: Vec<&'a [f64]>, scheme: Interpolation) -> Self {
        assert!(comps.len() <= MAX_COMPONENTS);
        let kind = match scheme {
            Interpolation::Cubic => Kind::Cubic(comps),
            Interpolation::Trigonometric => Kind::Trig(comps.iter().map(|c| half_spectrum(&grid, c)).collect()),
        };
        Self { grid, kind }
    }

    pub fn num_components(&self) -> usize {
        match &self.kind {
            Kind::Cubic(c) => c.len(),
            Kind::Trig(c) => c.len(),
        }
    }

    pub fn eval(&self, pos: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Cubic(comps) => eval_cubic(&self.grid, comps, pos, out),
            Kind::Trig(coeffs) => eval_trig(&self.grid, coeffs, pos, out),
        }
    }

    /// Evaluates every component at every position; output is
    /// component-major, matching [`crate::grid::GridField`] storage.
    pub fn eval_many(&self, positions: &[[f64; 3]]) -> Vec<f64> {
        let d = self.grid.dim();
        let nc = self.num_components();
        let per_point: Vec<[f64; MAX_COMPONENTS]> = positions
            .par_iter()
            .map(|p| {
                let mut out = [0.0; MAX_COMPONENTS];
                self.eval(&p[..d], &mut out[..nc]);
                out
            })
            .collect();
        let n = positions.len();
        let mut values = vec![0.0; nc * n];
        for (i, row) in per_point.iter().enumerate() {
            for c in 0..nc {
                values[c * n + i] = row[c];
            }
        }
        values
    }
}

fn split_position(p: f64, n: usize) -> (i64, f64) {
    let mut base = p.floor();
    let mut s = p - base;
    if s < SNAP {
        s = 0.0;
    } else if s > 1.0 - SNAP {
        s = 0.0;
        base += 1.0;
    }
    let n = n as i64;
    (((base as i64) % n + n) % n, s)
}

fn cubic_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

fn eval_cubic(grid: &Grid, comps: &[&[f64]], pos: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let n = grid.points_per_axis() as i64;
    let mut nodes = [[0usize; 4]; 3];
    let mut weights = [[0.0; 4]; 3];
    let mut taps = [1usize; 3];
    for a in 0..d {
        let (base, s) = split_position(pos[a], grid.points_per_axis());
        if s == 0.0 {
            nodes[a][0] = base as usize;
            weights[a][0] = 1.0;
            taps[a] = 1;
        } else {
            weights[a] = cubic_weights(s);
            for (k, node) in nodes[a].iter_mut().enumerate() {
                *node = ((base + k as i64 - 1 + n) % n) as usize;
            }
            taps[a] = 4;
        }
    }
    let strides: Vec<usize> = (0..d).map(|a| grid.stride(a)).collect();
    out.iter_mut().for_each(|o| *o = 0.0);
    let total: usize = taps[..d].iter().product();
    for t in 0..total {
        let mut rem = t;
        let mut flat = 0usize;
        let mut w = 1.0;
        for a in (0..d).rev() {
            let k = rem % taps[a];
            rem /= taps[a];
            flat += nodes[a][k] * strides[a];
            w *= weights[a][k];
        }
        for (o, comp) in out.iter_mut().zip(comps) {
            *o += w * comp[flat];
        }
    }
}

/// Normalized DFT coefficients with the last axis folded onto `0..=N/2`
/// (interior modes doubled) so that the interpolant is `Re` of a half sum.
fn half_spectrum(grid: &Grid, data: &[f64]) -> Vec<Complex64> {
    let n = grid.points_per_axis();
    let half = n / 2 + 1;
    let spec = spectral::forward(grid, data);
    let scale = 1.0 / grid.len() as f64;
    let prefixes = grid.len() / n;
    let mut out = Vec::with_capacity(prefixes * half);
    for p in 0..prefixes {
        for m in 0..half {
            let w = if m == 0 || m == n / 2 { 1.0 } else { 2.0 };
            out.push(spec[p * n + m] * (w * scale));
        }
    }
    out
}

fn signed_mode(m: usize, n: usize) -> f64 {
    if m <= n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    }
}

fn eval_trig(grid: &Grid, coeffs: &[Vec<Complex64>], pos: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let n = grid.points_per_axis();
    let half = n / 2 + 1;
    let two_pi_over_n = 2.0 * std::f64::consts::PI / n as f64;
    let last: Vec<Complex64> =
        (0..half).map(|m| Complex64::from_polar(1.0, m as f64 * pos[d - 1] * two_pi_over_n)).collect();
    let outer: Vec<Vec<Complex64>> = (0..d - 1)
        .map(|a| (0..n).map(|m| Complex64::from_polar(1.0, signed_mode(m, n) * pos[a] * two_pi_over_n)).collect())
        .collect();
    let prefixes = grid.len() / n;
    let prefix_phase = |p: usize| -> Complex64 {
        let mut phase = Complex64::new(1.0, 0.0);
        let mut rem = p;
        for a in (0..d - 1).rev() {
            phase *= outer[a][rem % n];
            rem /= n;
        }
        phase
    };
    for (o, c) in out.iter_mut().zip(coeffs) {
        let mut total = Complex64::default();
        for p in 0..prefixes {
            let row = &c[p * half..(p + 1) * half];
            let mut re = 0.0;
            let mut im = 0.0;
            for (z, e) in row.iter().zip(&last) {
                re += z.re * e.re - z.im * e.im;
                im += z.re * e.im + z.im * e.re;
            }
            total += Complex64::new(re, im) * prefix_phase(p);
        }
        *o = total.re;
    }
}
