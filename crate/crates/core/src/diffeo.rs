//! Near-identity diffeomorphisms `phi = id + f` of the periodic box, right
//! translation `R_phi u = u o phi`, inversion, and the conjugated heat flow
//! `S_phi(t) = R_phi o S(t) o R_{phi^{-1}}`.

use std::path::Path;
use std::sync::OnceLock;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{jacobian, weighted_norm, WeightSpec};
use crate::grid::{Grid, GridField};
use crate::heat::{check_time_grid, growth_factor, heat_apply, HeatParams};
use crate::interp::{Interpolation, Sampler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffeoConfig {
    pub interpolation: Interpolation,
    /// Residual bound `|phi(psi(x)) - x|` for the Newton inversion.
    pub inversion_tol: f64,
    pub max_newton_iterations: usize,
    /// Admissible `max |f|` as a fraction of the box half width.
    pub max_displacement_fraction: f64,
    pub min_jacobian_det: f64,
}

impl Default for DiffeoConfig {
    fn default() -> Self {
        Self {
            interpolation: Interpolation::Cubic,
            inversion_tol: 1e-10,
            max_newton_iterations: 50,
            max_displacement_fraction: 0.25,
            min_jacobian_det: 0.1,
        }
    }
}

impl DiffeoConfig {
    pub fn with_interpolation(interpolation: Interpolation) -> Self {
        Self { interpolation, ..Self::default() }
    }
}

/// Metadata stored next to a serialized displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffeoMetadata {
    pub config: DiffeoConfig,
    pub jacobian_det_min: f64,
}

/// `phi = id + f` with a lazily computed inverse displacement.
#[derive(Debug, Clone)]
pub struct Diffeo {
    displacement: GridField,
    jacobian_det_min: f64,
    config: DiffeoConfig,
    inverse: OnceLock<GridField>,
}

impl Diffeo {
    pub fn identity(grid: Grid, config: DiffeoConfig) -> Self {
        let inverse = OnceLock::new();
        let _ = inverse.set(GridField::zeros(grid, 1));
        Self { displacement: GridField::zeros(grid, 1), jacobian_det_min: 1.0, config, inverse }
    }

    /// Validates membership in the admissible neighborhood of the identity.
    pub fn new(displacement: GridField, config: DiffeoConfig) -> Result<Self> {
        displacement.expect_rank(1)?;
        displacement.check_finite("diffeo displacement")?;
        let bound = config.max_displacement_fraction * displacement.grid().half_width();
        let max_displacement = displacement.max_magnitude();
        if max_displacement > bound {
            return Err(Error::DisplacementTooLarge { max_displacement, bound });
        }
        let det_min = jacobian_det(&displacement)?.values().iter().copied().fold(f64::INFINITY, f64::min);
        if det_min < config.min_jacobian_det {
            return Err(Error::DegenerateJacobian { det_min, bound: config.min_jacobian_det });
        }
        Ok(Self { displacement, jacobian_det_min: det_min, config, inverse: OnceLock::new() })
    }

    pub fn grid(&self) -> &Grid {
        self.displacement.grid()
    }

    pub fn displacement(&self) -> &GridField {
        &self.displacement
    }

    pub fn config(&self) -> &DiffeoConfig {
        &self.config
    }

    pub fn jacobian_det_min(&self) -> f64 {
        self.jacobian_det_min
    }

    pub fn jacobian_det(&self) -> Result<GridField> {
        jacobian_det(&self.displacement)
    }

    pub fn with_config(&self, config: DiffeoConfig) -> Self {
        Self { config, inverse: OnceLock::new(), ..self.clone() }
    }

    pub fn is_identity(&self) -> bool {
        self.displacement.values().iter().all(|&v| v == 0.0)
    }

    /// Cached displacement `g` of `phi^{-1} = id + g`.
    pub fn inverse_displacement(&self) -> Result<&GridField> {
        if let Some(g) = self.inverse.get() {
            return Ok(g);
        }
        let g = solve_inverse(&self.displacement, &self.config, self.config.inversion_tol)?;
        // a racing fill computes the same field, so losing the race is harmless
        let _ = self.inverse.set(g);
        Ok(self.inverse.get().expect("inverse cache filled"))
    }

    /// Writes the displacement field (binary plus header sidecar) and a
    /// `.meta.json` file with the configuration and `jacobian_det_min`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.displacement.write_binary(path)?;
        let meta = DiffeoMetadata { config: self.config, jacobian_det_min: self.jacobian_det_min };
        std::fs::write(path.with_extension("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Reads a diffeo written by [`Diffeo::save`], revalidating admissibility.
    pub fn load(path: &Path) -> Result<Self> {
        let meta: DiffeoMetadata = serde_json::from_str(&std::fs::read_to_string(path.with_extension("meta.json"))?)?;
        Diffeo::new(GridField::read_binary(path)?, meta.config)
    }

    /// `outer o inner`, with displacement `f_inner + f_outer o inner`.
    pub fn compose(outer: &Diffeo, inner: &Diffeo) -> Result<Diffeo> {
        let moved = compose_field(&outer.displacement, inner)?;
        Diffeo::new(inner.displacement.add(&moved)?, inner.config)
    }
}

/// `det(I + df)` at every grid point, with `df` computed spectrally.
pub fn jacobian_det(displacement: &GridField) -> Result<GridField> {
    let jac = jacobian(displacement)?;
    let grid = *displacement.grid();
    let d = grid.dim();
    let values = (0..grid.len())
        .map(|i| {
            let mut m = [[0.0; 3]; 3];
            for r in 0..d {
                for c in 0..d {
                    m[r][c] = jac.component(r * d + c)[i] + if r == c { 1.0 } else { 0.0 };
                }
            }
            det(&m, d)
        })
        .collect();
    Ok(GridField::from_raw(grid, 0, values))
}

fn det(m: &[[f64; 3]; 3], d: usize) -> f64 {
    match d {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
    }
}

/// Solves `m x = r` for `d <= 3` by Gaussian elimination with partial pivoting.
fn solve_small(mut m: [[f64; 3]; 3], mut r: [f64; 3], d: usize) -> Option<[f64; 3]> {
    for col in 0..d {
        let pivot = (col..d).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        r.swap(col, pivot);
        for row in col + 1..d {
            let factor = m[row][col] / m[col][col];
            for k in col..d {
                m[row][k] -= factor * m[col][k];
            }
            r[row] -= factor * r[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..d).rev() {
        let tail: f64 = (row + 1..d).map(|k| m[row][k] * x[k]).sum();
        x[row] = (r[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Index-unit positions `x_j + f(x_j)` of every grid point.
fn displaced_positions(displacement: &GridField) -> Vec<[f64; 3]> {
    let grid = displacement.grid();
    let d = grid.dim();
    let h = grid.spacing();
    (0..grid.len())
        .map(|i| {
            let idx = grid.unflatten(i);
            let mut p = [0.0; 3];
            for a in 0..d {
                p[a] = idx[a] as f64 + displacement.component(a)[i] / h;
            }
            p
        })
        .collect()
}

pub(crate) fn compose_with_displacement(
    u: &GridField,
    displacement: &GridField,
    scheme: Interpolation,
) -> Result<GridField> {
    if u.grid() != displacement.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = *u.grid();
    let max_displacement = displacement.max_abs();
    if max_displacement > grid.half_width() {
        return Err(Error::DisplacementTooLarge { max_displacement, bound: grid.half_width() });
    }
    if displacement.values().iter().all(|&v| v == 0.0) {
        return Ok(u.clone());
    }
    let comps: Vec<&[f64]> = (0..u.num_components()).map(|c| u.component(c)).collect();
    let sampler = Sampler::new(grid, comps, scheme);
    let values = sampler.eval_many(&displaced_positions(displacement));
    GridField::new(grid, u.rank(), values)
}

/// Right translation `R_phi u = u o phi`, sampled on the grid.
pub fn compose_field(u: &GridField, phi: &Diffeo) -> Result<GridField> {
    compose_with_displacement(u, &phi.displacement, phi.config.interpolation)
}

struct NewtonOutcome {
    g: [f64; 3],
    residual: f64,
    iterations: usize,
    converged: bool,
}

fn newton_point(
    idx: [usize; 3],
    start: [f64; 3],
    f: &Sampler<'_>,
    jac: &Sampler<'_>,
    h: f64,
    d: usize,
    tol: f64,
    max_iter: usize,
) -> NewtonOutcome {
    let residual_at = |g: &[f64; 3]| -> ([f64; 3], f64) {
        let mut pos = [0.0; 3];
        for a in 0..d {
            pos[a] = idx[a] as f64 + g[a] / h;
        }
        let mut fv = [0.0; 3];
        f.eval(&pos[..d], &mut fv[..d]);
        let mut r = [0.0; 3];
        for a in 0..d {
            r[a] = g[a] + fv[a];
        }
        let norm = r[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        (r, norm)
    };
    let mut g = start;
    let (mut r, mut norm) = residual_at(&g);
    let mut iterations = 0;
    while norm > tol && iterations < max_iter {
        iterations += 1;
        let mut pos = [0.0; 3];
        for a in 0..d {
            pos[a] = idx[a] as f64 + g[a] / h;
        }
        let mut jv = [0.0; 9];
        jac.eval(&pos[..d], &mut jv[..d * d]);
        let mut m = [[0.0; 3]; 3];
        for rr in 0..d {
            for cc in 0..d {
                m[rr][cc] = jv[rr * d + cc] + if rr == cc { 1.0 } else { 0.0 };
            }
        }
        let Some(step) = solve_small(m, r, d) else { break };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut trial = g;
            for a in 0..d {
                trial[a] -= lambda * step[a];
            }
            let (r_new, n_new) = residual_at(&trial);
            if n_new < norm {
                g = trial;
                r = r_new;
                norm = n_new;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    NewtonOutcome { g, residual: norm, iterations, converged: norm <= tol }
}

fn solve_inverse(displacement: &GridField, config: &DiffeoConfig, tol: f64) -> Result<GridField> {
    let grid = *displacement.grid();
    let d = grid.dim();
    let h = grid.spacing();
    if displacement.values().iter().all(|&v| v == 0.0) {
        return Ok(GridField::zeros(grid, 1));
    }
    let f_comps: Vec<&[f64]> = (0..d).map(|c| displacement.component(c)).collect();
    let jac = jacobian(displacement)?;
    let jac_comps: Vec<&[f64]> = (0..d * d).map(|c| jac.component(c)).collect();
    let jac_sampler = Sampler::new(grid, jac_comps, Interpolation::Cubic);
    let cubic = Sampler::new(grid, f_comps.clone(), Interpolation::Cubic);
    let trig = match config.interpolation {
        Interpolation::Trigonometric => Some(Sampler::new(grid, f_comps, Interpolation::Trigonometric)),
        Interpolation::Cubic => None,
    };
    let max_iter = config.max_newton_iterations;
    let outcomes: Vec<NewtonOutcome> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let idx = grid.unflatten(i);
            let mut start = [0.0; 3];
            for a in 0..d {
                start[a] = -displacement.component(a)[i];
            }
            let first = newton_point(idx, start, &cubic, &jac_sampler, h, d, tol, max_iter);
            match &trig {
                None => first,
                Some(trig) => {
                    let mut second = newton_point(idx, first.g, trig, &jac_sampler, h, d, tol, max_iter);
                    second.iterations += first.iterations;
                    second
                }
            }
        })
        .collect();
    if let Some(worst) = outcomes.iter().filter(|o| !o.converged).max_by(|a, b| a.residual.total_cmp(&b.residual)) {
        return Err(Error::InversionFailed { residual: worst.residual, iterations: worst.iterations });
    }
    let max_iters = outcomes.iter().map(|o| o.iterations).max().unwrap_or(0);
    debug!("inverted diffeo on {} points, max {} Newton iterations", grid.len(), max_iters);
    let len = grid.len();
    let mut values = vec![0.0; d * len];
    for (i, o) in outcomes.iter().enumerate() {
        for a in 0..d {
            values[a * len + i] = o.g[a];
        }
    }
    GridField::new(grid, 1, values)
}

/// Newton inversion of `phi`: returns `psi = id + g` with
/// `|phi(psi(x)) - x| <= tol` at every grid point.
pub fn invert(phi: &Diffeo, tol: f64) -> Result<Diffeo> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("inversion tolerance {tol} must be positive")));
    }
    if phi.jacobian_det_min <= 0.0 {
        return Err(Error::DegenerateJacobian { det_min: phi.jacobian_det_min, bound: 0.0 });
    }
    let g = if tol == phi.config.inversion_tol {
        phi.inverse_displacement()?.clone()
    } else {
        solve_inverse(&phi.displacement, &phi.config, tol)?
    };
    let psi = Diffeo::new(g, phi.config)?;
    let _ = psi.inverse.set(phi.displacement.clone());
    Ok(psi)
}

/// `S_phi(t) v = R_phi S(t) R_{phi^{-1}} v`.
///
/// Evaluated as `v + R_phi (S(t) - I) R_{phi^{-1}} v`, so only the heat
/// increment is interpolated back onto the Lagrangian grid.
pub fn conjugated_heat(phi: &Diffeo, v: &GridField, t: f64) -> Result<GridField> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(v.clone());
    }
    if phi.is_identity() {
        return heat_apply(v, &HeatParams::spectral(t));
    }
    let scheme = phi.config.interpolation;
    let u = compose_with_displacement(v, phi.inverse_displacement()?, scheme)?;
    let increment = heat_apply(&u, &HeatParams::spectral(t))?.sub(&u)?;
    v.add(&compose_with_displacement(&increment, &phi.displacement, scheme)?)
}

/// Returns `(t, ||S_phi(t) v||_w / (1+t)^{|delta|/2})` for each `t`.
pub fn conjugated_growth_probe(phi: &Diffeo, v: &GridField, w: &WeightSpec, t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_time_grid(t_grid)?;
    t_grid
        .iter()
        .map(|&t| {
            let flowed = conjugated_heat(phi, v, t)?;
            Ok((t, weighted_norm(&flowed, w)? / growth_factor(t, w.delta)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(2, 32, PI).unwrap()
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.bin");
        let phi =
            Diffeo::new(perturbation(grid(), 0.1), DiffeoConfig::with_interpolation(Interpolation::Trigonometric))
                .unwrap();
        phi.save(&path).unwrap();
        let back = Diffeo::load(&path).unwrap();
        assert_eq!(back.displacement(), phi.displacement());
        assert_eq!(back.config(), phi.config());
        assert_eq!(back.jacobian_det_min(), phi.jacobian_det_min());
    }

    fn perturbation(g: Grid, amp: f64) -> GridField {
        GridField::from_vector_fn(g, |x, o| {
            o[0] = amp * (x[1]).sin() * (x[0]).cos();
            o[1] = amp * (x[0] + 0.3).sin();
        })
        .unwrap()
    }

    #[test]
    fn identity_composition_is_bitwise() {
        let g = grid();
        let u = GridField::from_scalar_fn(g, |x| (x[0] - 2.0 * x[1]).cos()).unwrap();
        let id = Diffeo::identity(g, DiffeoConfig::default());
        assert_eq!(compose_field(&u, &id).unwrap(), u);
    }

    #[test]
    fn lattice_shift_is_circular_shift() {
        let g = grid();
        let h = g.spacing();
        let u = GridField::from_scalar_fn(g, |x| (x[0]).sin() + (3.0 * x[1]).cos() * x[0].cos()).unwrap();
        let shift = GridField::from_vector_fn(g, |_, o| {
            o[0] = 3.0 * h;
            o[1] = -2.0 * h;
        })
        .unwrap();
        let phi = Diffeo::new(shift, DiffeoConfig::default()).unwrap();
        let out = compose_field(&u, &phi).unwrap();
        let n = g.points_per_axis();
        for i in 0..g.len() {
            let idx = g.unflatten(i);
            let src = ((idx[0] + 3) % n) * n + (idx[1] + n - 2) % n;
            assert_eq!(out.values()[i], u.values()[src]);
        }
    }

    #[test]
    fn rejects_large_or_folded_maps() {
        let g = grid();
        let big = GridField::from_vector_fn(g, |_, o| {
            o[0] = 1.0;
            o[1] = 0.0;
        })
        .unwrap();
        assert!(matches!(Diffeo::new(big, DiffeoConfig::default()), Err(Error::DisplacementTooLarge { .. })));
        let fold = GridField::from_vector_fn(g, |x, o| {
            o[0] = 0.3 * (4.0 * x[0]).sin();
            o[1] = 0.0;
        })
        .unwrap();
        assert!(matches!(Diffeo::new(fold, DiffeoConfig::default()), Err(Error::DegenerateJacobian { .. })));
    }

    #[test]
    fn inverse_of_translation_is_opposite_translation() {
        let g = grid();
        let c = [0.137, -0.21];
        let shift = GridField::from_vector_fn(g, |_, o| {
            o[0] = c[0];
            o[1] = c[1];
        })
        .unwrap();
        let phi = Diffeo::new(shift, DiffeoConfig::default()).unwrap();
        let psi = invert(&phi, 1e-12).unwrap();
        for a in 0..2 {
            assert!(psi.displacement().component(a).iter().all(|v| (v + c[a]).abs() < 1e-12));
        }
    }

    #[test]
    fn inverse_of_identity_is_identity() {
        let g = grid();
        let id = Diffeo::identity(g, DiffeoConfig::default());
        let psi = invert(&id, 1e-10).unwrap();
        assert!(psi.is_identity());
    }

    #[test]
    fn inverse_is_two_sided() {
        let g = grid();
        let tol = 1e-10;
        for scheme in [Interpolation::Cubic, Interpolation::Trigonometric] {
            let phi = Diffeo::new(perturbation(g, 0.05), DiffeoConfig::with_interpolation(scheme)).unwrap();
            let psi = invert(&phi, tol).unwrap();
            // phi o psi - id = g + f o psi, checked pointwise by Newton
            let right = psi.displacement().add(&compose_field(phi.displacement(), &psi).unwrap()).unwrap();
            assert!(right.max_magnitude() <= tol, "{scheme:?}: {}", right.max_magnitude());
            let left = phi.displacement().add(&compose_field(psi.displacement(), &phi).unwrap()).unwrap();
            let bound = if scheme == Interpolation::Trigonometric { 10.0 * tol } else { 1e-5 };
            assert!(left.max_magnitude() <= bound, "{scheme:?}: {}", left.max_magnitude());
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = grid();
        let phi =
            Diffeo::new(perturbation(g, 0.2), DiffeoConfig { max_newton_iterations: 1, ..Default::default() }).unwrap();
        assert!(matches!(invert(&phi, 1e-14), Err(Error::InversionFailed { .. })));
    }

    #[test]
    fn conjugated_heat_basic_identities() {
        let g = grid();
        let v = GridField::from_vector_fn(g, |x, o| {
            o[0] = (x[0] + x[1]).sin();
            o[1] = (2.0 * x[1]).cos();
        })
        .unwrap();
        let id = Diffeo::identity(g, DiffeoConfig::default());
        let direct = heat_apply(&v, &HeatParams::spectral(0.3)).unwrap();
        assert!(conjugated_heat(&id, &v, 0.3).unwrap().sub(&direct).unwrap().max_abs() < 1e-14);

        let phi = Diffeo::new(perturbation(g, 0.05), DiffeoConfig::default()).unwrap();
        let ones = GridField::constant_scalar(g, 1.0);
        for t in [0.0, 0.1, 5.0] {
            let out = conjugated_heat(&phi, &ones, t).unwrap();
            assert!(out.values().iter().all(|x| (x - 1.0).abs() < 1e-13));
        }
        assert_eq!(conjugated_heat(&phi, &v, 0.0).unwrap(), v);
        assert!(matches!(conjugated_heat(&phi, &v, -0.1), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn compose_of_diffeos_matches_iterated_composition() {
        let g = grid();
        let cfg = DiffeoConfig::with_interpolation(Interpolation::Trigonometric);
        let phi1 = Diffeo::new(perturbation(g, 0.04), cfg).unwrap();
        let phi2 = Diffeo::new(perturbation(g, -0.03).scaled(1.2), cfg).unwrap();
        let u = GridField::from_scalar_fn(g, |x| (x[0]).cos() * (2.0 * x[1]).sin()).unwrap();
        let iterated = compose_field(&compose_field(&u, &phi2).unwrap(), &phi1).unwrap();
        let composite = Diffeo::compose(&phi2, &phi1).unwrap();
        let direct = compose_field(&u, &composite).unwrap();
        assert!(iterated.sub(&direct).unwrap().max_abs() < 1e-6);
    }
}
