//! The inviscid half of the splitting: Poisson and Leray solves, planar
//! Biot-Savart, the Lagrangian Euler vector field and its RK4 flow.

use log::warn;
use rustfft::num_complex::Complex64;

use crate::diffeo::{compose_field, compose_with_displacement, Diffeo};
use crate::error::{Error, Result};
use crate::fields::{curl_2d, gradient, q_nonlinearity};
use crate::grid::GridField;
use crate::spectral;

/// A point `(phi, v)` of the Lagrangian phase space, with `v = u o phi`.
#[derive(Debug, Clone)]
pub struct LagrangianState {
    pub phi: Diffeo,
    pub v: GridField,
}

impl LagrangianState {
    pub fn new(phi: Diffeo, v: GridField) -> Result<Self> {
        v.expect_rank(1)?;
        if phi.grid() != v.grid() {
            return Err(Error::GridMismatch);
        }
        v.check_finite("lagrangian velocity")?;
        Ok(Self { phi, v })
    }

    /// Eulerian velocity `u = v o phi^{-1}`.
    pub fn eulerian_velocity(&self) -> Result<GridField> {
        if self.phi.is_identity() {
            return Ok(self.v.clone());
        }
        compose_with_displacement(&self.v, self.phi.inverse_displacement()?, self.phi.config().interpolation)
    }
}

/// Zero-mean solution of `Delta p = f` on the periodic box.
pub fn poisson_solve(f: &GridField) -> Result<GridField> {
    f.expect_rank(0)?;
    let grid = *f.grid();
    let values = spectral::apply_multiplier(&grid, f.values(), |idx| {
        let k2 = spectral::wavenumber_sq(&grid, idx);
        if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(-1.0 / k2, 0.0)
        }
    });
    Ok(GridField::from_raw(grid, 0, values))
}

/// Projection `u - grad Delta^{-1} div u` onto divergence-free fields.
///
/// Uses the odd-derivative wavevector throughout so the discrete projector
/// is exactly idempotent and its output exactly solenoidal.
pub fn leray_project(u: &GridField) -> Result<GridField> {
    u.expect_rank(1)?;
    let grid = *u.grid();
    let d = grid.dim();
    let specs: Vec<Vec<Complex64>> = (0..d).map(|c| spectral::forward(&grid, u.component(c))).collect();
    let mut out: Vec<Vec<Complex64>> = specs.clone();
    spectral::for_each_mode(&grid, |flat, idx| {
        let k: Vec<f64> = (0..d).map(|a| grid.odd_wavenumber(idx[a])).collect();
        let k2: f64 = k.iter().map(|x| x * x).sum();
        if k2 == 0.0 {
            return;
        }
        let kdotu: Complex64 = (0..d).map(|a| specs[a][flat] * k[a]).sum();
        for a in 0..d {
            out[a][flat] -= kdotu * (k[a] / k2);
        }
    });
    let comps = out.into_iter().map(|s| spectral::inverse_real(&grid, s)).collect();
    GridField::from_components(grid, 1, comps)
}

/// Velocity `u = grad^perp psi` with `-Delta psi = omega`, so that
/// `curl u = omega` for zero-mean planar vorticity.
pub fn biot_savart_2d(omega: &GridField) -> Result<GridField> {
    omega.expect_rank(0)?;
    let grid = *omega.grid();
    if grid.dim() != 2 {
        return Err(Error::InvalidParameter(format!("biot_savart_2d needs d = 2, got {}", grid.dim())));
    }
    let mean = omega.mean(0);
    let scale = omega.max_abs().max(1.0);
    if mean.abs() > 1e-12 * scale {
        return Err(Error::NonZeroMean(mean));
    }
    let spec = spectral::forward(&grid, omega.values());
    let mut ux = spec.clone();
    let mut uy = spec;
    spectral::for_each_mode(&grid, |flat, idx| {
        let kx = grid.odd_wavenumber(idx[0]);
        let ky = grid.odd_wavenumber(idx[1]);
        let k2 = kx * kx + ky * ky;
        if k2 == 0.0 {
            ux[flat] = Complex64::default();
            uy[flat] = Complex64::default();
            return;
        }
        let psi = ux[flat] / k2;
        ux[flat] = Complex64::new(0.0, ky) * psi;
        uy[flat] = Complex64::new(0.0, -kx) * psi;
    });
    GridField::from_components(grid, 1, vec![spectral::inverse_real(&grid, ux), spectral::inverse_real(&grid, uy)])
}

/// Pressure-gradient acceleration `grad Delta^{-1} Q(u)` in Eulerian form.
pub fn eulerian_acceleration(u: &GridField) -> Result<GridField> {
    gradient(&poisson_solve(&q_nonlinearity(u)?)?)
}

/// The Euler vector field `E(phi, v) = (v, R_phi grad Delta^{-1} Q(u))`,
/// `u = v o phi^{-1}`.
pub fn euler_generator(s: &LagrangianState) -> Result<(GridField, GridField)> {
    let u = s.eulerian_velocity()?;
    let accel = eulerian_acceleration(&u)?;
    Ok((s.v.clone(), compose_field(&accel, &s.phi)?))
}

/// Substep count keeping `max|v| dt <= h/4`.
pub fn auto_substeps(s: &LagrangianState, tau: f64) -> usize {
    let h = s.v.grid().spacing();
    let vmax = s.v.max_magnitude();
    ((tau * vmax / (0.25 * h)).ceil() as usize).max(1)
}

fn stage(s: &LagrangianState, df: &GridField, dv: &GridField, dt: f64) -> Result<LagrangianState> {
    let f = s.phi.displacement().lin_comb(1.0, df, dt)?;
    let v = s.v.lin_comb(1.0, dv, dt)?;
    LagrangianState::new(Diffeo::new(f, *s.phi.config())?, v)
}

/// RK4 approximation of the Euler flow `G_tau` over `substeps` equal steps.
pub fn euler_step(s: &LagrangianState, tau: f64, substeps: usize) -> Result<LagrangianState> {
    if tau < 0.0 || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("step length {tau} must be finite and nonnegative")));
    }
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be positive".into()));
    }
    if tau == 0.0 {
        return Ok(s.clone());
    }
    let dt = tau / substeps as f64;
    let h = s.v.grid().spacing();
    let mut state = s.clone();
    for _ in 0..substeps {
        let displacement = state.v.max_magnitude() * dt;
        if displacement > 4.0 * h {
            return Err(Error::Cfl { displacement, limit: 4.0 * h });
        }
        if displacement > h {
            warn!("CFL warning: max|v| dt = {displacement:.3e} exceeds h = {h:.3e}");
        }
        let (k1f, k1v) = euler_generator(&state)?;
        let (k2f, k2v) = euler_generator(&stage(&state, &k1f, &k1v, 0.5 * dt)?)?;
        let (k3f, k3v) = euler_generator(&stage(&state, &k2f, &k2v, 0.5 * dt)?)?;
        let (k4f, k4v) = euler_generator(&stage(&state, &k3f, &k3v, dt)?)?;
        let combine = |base: &GridField, k1: &GridField, k2: &GridField, k3: &GridField, k4: &GridField| {
            let vals = base
                .values()
                .iter()
                .zip(k1.values())
                .zip(k2.values())
                .zip(k3.values())
                .zip(k4.values())
                .map(|((((b, a1), a2), a3), a4)| b + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4))
                .collect();
            GridField::new(*base.grid(), 1, vals)
        };
        let f = combine(state.phi.displacement(), &k1f, &k2f, &k3f, &k4f)?;
        let v = combine(&state.v, &k1v, &k2v, &k3v, &k4v)?;
        state = LagrangianState::new(Diffeo::new(f, *state.phi.config())?, v)?;
    }
    Ok(state)
}

/// Planar vorticity pulled back to Lagrangian labels:
/// `(phi^* omega)(x) = omega(phi(x)) det(d phi(x))`.
pub fn pulled_back_vorticity(s: &LagrangianState) -> Result<GridField> {
    let omega = curl_2d(&s.eulerian_velocity()?)?;
    let moved = compose_field(&omega, &s.phi)?;
    moved.mul(&s.phi.jacobian_det()?)
}

/// `max |phi_1^* omega_1 - phi_0^* omega_0|` over the grid.
pub fn vorticity_transport_check(s0: &LagrangianState, s1: &LagrangianState) -> Result<f64> {
    if s0.v.grid().dim() != 2 {
        return Err(Error::InvalidParameter(format!(
            "vorticity transport check needs d = 2, got {}",
            s0.v.grid().dim()
        )));
    }
    Ok(pulled_back_vorticity(s1)?.sub(&pulled_back_vorticity(s0)?)?.max_abs())
}
