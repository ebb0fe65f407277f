//! Spectral calculus on [`GridField`]s and the weighted Sobolev norms
//! `||f||_{W^{m,p}_delta}`.
//!
//! Derivatives are exact derivatives of the trigonometric interpolant. Odd
//! derivatives drop the Nyquist mode so that real fields stay real; even
//! derivatives keep it.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::spectral;

/// Highest derivative order accepted by default.
pub const MAX_DERIVATIVE_ORDER: usize = 4;

/// Width of the outer shell (as a fraction of `L`) in which the window
/// rolls off from one to zero.
pub const WINDOW_SHELL: f64 = 0.1;

/// Selects the weighted norm `W^{m,p}_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub m: usize,
    pub p: f64,
    pub delta: f64,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
}

fn default_max_order() -> usize {
    MAX_DERIVATIVE_ORDER
}

impl WeightSpec {
    pub fn new(m: usize, p: f64, delta: f64) -> Result<Self> {
        Self::with_max_order(m, p, delta, MAX_DERIVATIVE_ORDER)
    }

    pub fn with_max_order(m: usize, p: f64, delta: f64, max_order: usize) -> Result<Self> {
        let w = Self { m, p, delta, max_order };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m > self.max_order {
            return Err(Error::OrderTooHigh { order: self.m, max: self.max_order });
        }
        if !(self.p.is_finite() && self.p > 1.0) {
            return Err(Error::InvalidWeight(format!("p = {} must lie in (1, inf)", self.p)));
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidWeight("delta must be finite".into()));
        }
        Ok(())
    }
}

/// Japanese bracket `<x> = sqrt(1 + |x|^2)`.
pub fn bracket(x: &[f64]) -> f64 {
    (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// All multi-indices of length `dim` and total order `order`.
pub fn multi_indices(dim: usize, order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    let mut alpha = [0usize; 3];
    fn rec(axis: usize, dim: usize, remaining: usize, alpha: &mut [usize; 3], out: &mut Vec<[usize; 3]>) {
        if axis == dim - 1 {
            alpha[axis] = remaining;
            out.push(*alpha);
            alpha[axis] = 0;
            return;
        }
        for k in (0..=remaining).rev() {
            alpha[axis] = k;
            rec(axis + 1, dim, remaining - k, alpha, out);
        }
        alpha[axis] = 0;
    }
    rec(0, dim, order, &mut alpha, &mut out);
    out
}

fn derivative_factor(grid: &Grid, m: usize, order: usize) -> Complex64 {
    let k = if order % 2 == 1 { grid.odd_wavenumber(m) } else { grid.wavenumber(m) };
    let ik = Complex64::new(0.0, k);
    ik.powu(order as u32)
}

fn partial_values(grid: &Grid, data: &[f64], alpha: [usize; 3]) -> Vec<f64> {
    if alpha.iter().all(|&a| a == 0) {
        return data.to_vec();
    }
    let d = grid.dim();
    spectral::apply_multiplier(grid, data, |idx| {
        (0..d).fold(Complex64::new(1.0, 0.0), |acc, a| acc * derivative_factor(grid, idx[a], alpha[a]))
    })
}

fn map_components(f: &GridField, op: impl Fn(&[f64]) -> Vec<f64>) -> GridField {
    let values = (0..f.num_components()).flat_map(|c| op(f.component(c))).collect();
    GridField::from_raw(*f.grid(), f.rank(), values)
}

/// Mixed partial derivative `d^alpha f`, applied componentwise.
pub fn partial(f: &GridField, alpha: &[usize]) -> Result<GridField> {
    let grid = *f.grid();
    if alpha.len() != grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "multi-index of length {} for dimension {}",
            alpha.len(),
            grid.dim()
        )));
    }
    let order: usize = alpha.iter().sum();
    if order > MAX_DERIVATIVE_ORDER {
        return Err(Error::OrderTooHigh { order, max: MAX_DERIVATIVE_ORDER });
    }
    let mut a = [0usize; 3];
    a[..alpha.len()].copy_from_slice(alpha);
    Ok(map_components(f, |data| partial_values(&grid, data, a)))
}

/// `d^order f / dx_axis^order`, applied componentwise.
pub fn spectral_derivative(f: &GridField, axis: usize, order: usize) -> Result<GridField> {
    let d = f.grid().dim();
    if axis >= d {
        return Err(Error::AxisOutOfRange { axis, dim: d });
    }
    let mut alpha = vec![0usize; d];
    alpha[axis] = order;
    partial(f, &alpha)
}

pub fn gradient(f: &GridField) -> Result<GridField> {
    f.expect_rank(0)?;
    let grid = *f.grid();
    let comps = (0..grid.dim())
        .map(|a| {
            let mut alpha = [0usize; 3];
            alpha[a] = 1;
            partial_values(&grid, f.values(), alpha)
        })
        .collect();
    GridField::from_components(grid, 1, comps)
}

pub fn divergence(u: &GridField) -> Result<GridField> {
    u.expect_rank(1)?;
    let grid = *u.grid();
    let d = grid.dim();
    let mut spec = vec![Complex64::default(); grid.len()];
    for c in 0..d {
        let comp = spectral::forward(&grid, u.component(c));
        spectral::for_each_mode(&grid, |flat, idx| {
            spec[flat] += Complex64::new(0.0, grid.odd_wavenumber(idx[c])) * comp[flat];
        });
    }
    Ok(GridField::from_raw(grid, 0, spectral::inverse_real(&grid, spec)))
}

pub fn laplacian(f: &GridField) -> GridField {
    let grid = *f.grid();
    map_components(f, |data| {
        spectral::apply_multiplier(&grid, data, |idx| Complex64::new(-spectral::wavenumber_sq(&grid, idx), 0.0))
    })
}

/// Jacobian matrix field: component `i*d + j` holds `d u_i / d x_j`.
pub fn jacobian(u: &GridField) -> Result<GridField> {
    u.expect_rank(1)?;
    let grid = *u.grid();
    let d = grid.dim();
    let mut comps = Vec::with_capacity(d * d);
    for i in 0..d {
        let spec = spectral::forward(&grid, u.component(i));
        for j in 0..d {
            let mut s = spec.clone();
            spectral::for_each_mode(&grid, |flat, idx| {
                s[flat] *= Complex64::new(0.0, grid.odd_wavenumber(idx[j]));
            });
            comps.push(spectral::inverse_real(&grid, s));
        }
    }
    GridField::from_components(grid, 2, comps)
}

/// Scalar vorticity `d u_1/dx_0 - d u_0/dx_1` of a planar field.
pub fn curl_2d(u: &GridField) -> Result<GridField> {
    u.expect_rank(1)?;
    let grid = *u.grid();
    if grid.dim() != 2 {
        return Err(Error::InvalidParameter(format!("curl_2d needs d = 2, got {}", grid.dim())));
    }
    let dy_u0 = partial_values(&grid, u.component(0), [0, 1, 0]);
    let dx_u1 = partial_values(&grid, u.component(1), [1, 0, 0]);
    let values = dx_u1.iter().zip(&dy_u0).map(|(a, b)| a - b).collect();
    Ok(GridField::from_raw(grid, 0, values))
}

/// `Q(u) = tr([du]^2) = sum_{i,j} (d_j u_i)(d_i u_j)`.
pub fn q_nonlinearity(u: &GridField) -> Result<GridField> {
    let jac = jacobian(u)?;
    let grid = *u.grid();
    let d = grid.dim();
    let mut q = vec![0.0; grid.len()];
    for i in 0..d {
        for j in 0..d {
            let a = jac.component(i * d + j);
            let b = jac.component(j * d + i);
            for (qk, (x, y)) in q.iter_mut().zip(a.iter().zip(b)) {
                *qk += x * y;
            }
        }
    }
    Ok(GridField::from_raw(grid, 0, q))
}

fn brackets(grid: &Grid) -> Vec<f64> {
    let d = grid.dim();
    (0..grid.len()).map(|i| bracket(&grid.point(i)[..d])).collect()
}

/// `( sum_{|alpha|<=m} || <x>^{delta+|alpha|} d^alpha f ||_{L^p}^p )^{1/p}`
/// with midpoint quadrature; vector components are summed inside the
/// `p`-th power.
pub fn weighted_norm(f: &GridField, w: &WeightSpec) -> Result<f64> {
    w.validate()?;
    f.check_finite("weighted_norm input")?;
    let grid = *f.grid();
    let br = brackets(&grid);
    let mut total = 0.0;
    for order in 0..=w.m {
        let exponent = w.delta + order as f64;
        let weight: Vec<f64> = br.iter().map(|b| b.powf(exponent)).collect();
        for alpha in multi_indices(grid.dim(), order) {
            for c in 0..f.num_components() {
                let deriv = partial_values(&grid, f.component(c), alpha);
                total += deriv.iter().zip(&weight).map(|(v, wt)| (wt * v).abs().powf(w.p)).sum::<f64>();
            }
        }
    }
    Ok((total * grid.cell_volume()).powf(1.0 / w.p))
}

/// Grid sup of `<x>^{delta + d/p} |f(x)|`, the pointwise quantity controlled
/// by the weighted norm when `m > d/p`.
pub fn weighted_sup(f: &GridField, w: &WeightSpec) -> f64 {
    let grid = f.grid();
    let d = grid.dim();
    let exponent = w.delta + d as f64 / w.p;
    let len = grid.len();
    (0..len)
        .map(|i| {
            let mag = (0..f.num_components()).map(|c| f.component(c)[i].powi(2)).sum::<f64>().sqrt();
            bracket(&grid.point(i)[..d]).powf(exponent) * mag
        })
        .fold(0.0, f64::max)
}

/// Ratio `||fg||_{W^{k,p}_{d1+d2+d/p}} / (||f||_{W^{m,p}_{d1}} ||g||_{W^{l,p}_{d2}})`.
pub fn product_bound_probe(f: &GridField, g: &GridField, wf: &WeightSpec, wg: &WeightSpec, k: usize) -> Result<f64> {
    f.expect_rank(0)?;
    g.expect_rank(0)?;
    if f.grid() != g.grid() {
        return Err(Error::GridMismatch);
    }
    let (m, l) = (wf.m, wg.m);
    if !(k <= l && l <= m) {
        return Err(Error::InvalidWeight(format!("need k <= l <= m, got k={k}, l={l}, m={m}")));
    }
    if (wf.p - wg.p).abs() > 0.0 {
        return Err(Error::InvalidWeight("both factors must use the same p".into()));
    }
    let d_over_p = f.grid().dim() as f64 / wf.p;
    if (m + l) as f64 - k as f64 <= d_over_p {
        return Err(Error::InvalidWeight(format!("need m + l - k > d/p, got {} <= {d_over_p}", m + l - k)));
    }
    let target = WeightSpec::with_max_order(k, wf.p, wf.delta + wg.delta + d_over_p, wf.max_order)?;
    let numerator = weighted_norm(&f.mul(g)?, &target)?;
    if numerator == 0.0 {
        return Ok(0.0);
    }
    let denominator = weighted_norm(f, wf)? * weighted_norm(g, wg)?;
    Ok(numerator / denominator)
}

fn smooth_step(t: f64) -> f64 {
    let psi = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let a = psi(t);
    let b = psi(1.0 - t);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// One-dimensional `C^inf` cutoff: 1 on `|x| <= (1-shell) L`, 0 at `|x| = L`.
pub fn cutoff(x: f64, half_width: f64) -> f64 {
    let s = x.abs() / half_width;
    if s <= 1.0 - WINDOW_SHELL {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        smooth_step((1.0 - s) / WINDOW_SHELL)
    }
}

/// Tensor-product window that rolls off in the outer shell of the box.
pub fn box_window(grid: &Grid, x: &[f64]) -> f64 {
    x.iter().map(|&xi| cutoff(xi, grid.half_width())).product()
}

/// Samples `f` multiplied by the box window.
pub fn windowed_scalar(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<GridField> {
    GridField::from_scalar_fn(grid, |x| box_window(&grid, x) * f(x))
}

pub fn windowed_vector(grid: Grid, f: impl Fn(&[f64], &mut [f64])) -> Result<GridField> {
    GridField::from_vector_fn(grid, |x, out| {
        f(x, out);
        let w = box_window(&grid, x);
        out.iter_mut().for_each(|o| *o *= w);
    })
}
