//! Navier-Stokes by Lagrangian viscous splitting: alternate the Euler flow
//! `G_{tau/n}` with the heat half-map `(phi, v) -> (phi, S_phi(nu tau/n) v)`,
//! then recover `u = v o phi^{-1}` and the pressure at output times.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffeo::{compose_field, conjugated_heat, Diffeo, DiffeoConfig};
use crate::error::{Error, Result};
use crate::euler::{auto_substeps, biot_savart_2d, euler_step, leray_project, poisson_solve, LagrangianState};
use crate::fields::{divergence, gradient, jacobian, q_nonlinearity, weighted_norm, windowed_scalar, WeightSpec};
use crate::grid::{Grid, GridField};
use crate::interp::Interpolation;
use crate::spectral;
use crate::trotter::{FlowMap, StateVector, TrotterRun};

/// Relative spectral energy allowed in the top third of the spectrum.
pub const BAND_LIMIT_TOLERANCE: f64 = 1e-10;

/// Fraction of the box treated as the outer shell in pressure reports.
pub const PRESSURE_SHELL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsConfig {
    pub grid: Grid,
    pub nu: f64,
    pub horizon: f64,
    pub rounds: usize,
    /// RK4 substeps per Euler half-step; `None` picks them from the CFL rule.
    pub euler_substeps_per_round: Option<usize>,
    pub interpolation: Interpolation,
    pub output_times: Vec<f64>,
    /// Reset `(phi, v) -> (id, u)` after every this many rounds.
    pub remesh_every: Option<usize>,
    /// Weights whose norms of `u` are recorded in each snapshot.
    pub diagnostic_weights: Vec<WeightSpec>,
}

impl NsConfig {
    pub fn new(grid: Grid, nu: f64, horizon: f64, rounds: usize) -> Self {
        Self {
            grid,
            nu,
            horizon,
            rounds,
            euler_substeps_per_round: None,
            interpolation: Interpolation::Cubic,
            output_times: vec![horizon],
            remesh_every: None,
            diagnostic_weights: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(Error::InvalidParameter(format!("viscosity {} outside [0, 1]", self.nu)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon {} must be positive", self.horizon)));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be at least 1".into()));
        }
        if self.euler_substeps_per_round == Some(0) {
            return Err(Error::InvalidParameter("euler substeps must be positive".into()));
        }
        if self.remesh_every == Some(0) {
            return Err(Error::InvalidParameter("remesh interval must be positive".into()));
        }
        if let Some(t) = self.output_times.iter().find(|t| !(**t >= 0.0 && **t <= self.horizon)) {
            return Err(Error::InvalidParameter(format!("output time {t} outside [0, {}]", self.horizon)));
        }
        for w in &self.diagnostic_weights {
            w.validate()?;
        }
        Ok(())
    }

    pub fn diffeo_config(&self) -> DiffeoConfig {
        DiffeoConfig::with_interpolation(self.interpolation)
    }

    /// Round index whose end time is nearest to `t`.
    pub fn round_for_time(&self, t: f64) -> usize {
        ((t / self.horizon * self.rounds as f64).round() as usize).min(self.rounds)
    }

    /// Hex SHA-256 of `"blob <len>\0" + json(config)`, git's object framing.
    pub fn content_hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let mut hasher = Sha256::new();
        hasher.update(format!("blob {}\0", json.len()).as_bytes());
        hasher.update(json.as_bytes());
        Ok(hex::encode(hasher.finalize()))
    }
}

#[derive(Debug, Clone)]
pub struct NsSnapshot {
    pub time: f64,
    pub round: usize,
    pub u: GridField,
    pub p: GridField,
    pub phi: Diffeo,
    pub v: GridField,
    pub diagnostics: BTreeMap<String, f64>,
}

impl StateVector for LagrangianState {
    /// `sqrt(||f||^2 + ||v||^2)` in `L^2`.
    fn norm(&self) -> f64 {
        self.phi.displacement().l2_norm().hypot(self.v.l2_norm())
    }

    fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        let f = self.phi.displacement().lin_comb(a, other.phi.displacement(), b)?;
        let v = self.v.lin_comb(a, &other.v, b)?;
        LagrangianState::new(Diffeo::new(f, *self.phi.config())?, v)
    }

    fn distance(&self, other: &Self) -> Result<f64> {
        let df = self.phi.displacement().l2_distance(other.phi.displacement())?;
        Ok(df.hypot(self.v.l2_distance(&other.v)?))
    }
}

/// `(phi, v) -> (phi, S_phi(nu t) v)`.
pub fn heat_half_map(s: &LagrangianState, t: f64, nu: f64) -> Result<LagrangianState> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if nu == 0.0 {
        return Ok(s.clone());
    }
    Ok(LagrangianState { phi: s.phi.clone(), v: conjugated_heat(&s.phi, &s.v, nu * t)? })
}

/// The Euler flow `G_t` as a [`FlowMap`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EulerFlow {
    pub substeps: Option<usize>,
}

impl FlowMap for EulerFlow {
    type State = LagrangianState;

    fn step(&self, t: f64, z: &LagrangianState) -> Result<LagrangianState> {
        euler_step(z, t, self.substeps.unwrap_or_else(|| auto_substeps(z, t)))
    }

    fn descriptor(&self) -> String {
        "euler".into()
    }
}

/// The heat half-map with viscosity `nu` as a [`FlowMap`].
#[derive(Debug, Clone, Copy)]
pub struct HeatHalfFlow {
    pub nu: f64,
}

impl FlowMap for HeatHalfFlow {
    type State = LagrangianState;

    fn step(&self, t: f64, z: &LagrangianState) -> Result<LagrangianState> {
        heat_half_map(z, t, self.nu)
    }

    fn descriptor(&self) -> String {
        format!("heat[nu={}]", self.nu)
    }
}

/// Fraction of spectral energy in modes with some `|k_i| > N/3`, summed
/// over components.
pub fn high_mode_energy_fraction(u: &GridField) -> f64 {
    let grid = *u.grid();
    let n = grid.points_per_axis();
    let (mut total, mut high) = (0.0, 0.0);
    for c in 0..u.num_components() {
        let spec = spectral::forward(&grid, u.component(c));
        spectral::for_each_mode(&grid, |flat, idx| {
            let e = spec[flat].norm_sqr();
            total += e;
            let top = (0..grid.dim()).map(|a| idx[a].min(n - idx[a])).max().unwrap_or(0);
            if 3 * top > n {
                high += e;
            }
        });
    }
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}

/// `||div u||_{L^2} / ||grad u||_{L^2}`, zero for a constant field.
pub fn divergence_residual(u: &GridField) -> Result<f64> {
    let grad = jacobian(u)?.l2_norm();
    if grad == 0.0 {
        return Ok(0.0);
    }
    Ok(divergence(u)?.l2_norm() / grad)
}

/// Pressure `p = -Delta^{-1} Q(u)`, fixed by zero mean.
pub fn pressure(u: &GridField) -> Result<GridField> {
    Ok(poisson_solve(&q_nonlinearity(u)?)?.scaled(-1.0))
}

fn weight_key(w: &WeightSpec) -> String {
    format!("weighted_norm_m{}_p{}_delta{}", w.m, w.p, w.delta)
}

/// Recovers `u` and `p` from a Lagrangian state and records diagnostics.
pub fn take_snapshot(state: &LagrangianState, time: f64, round: usize, cfg: &NsConfig) -> Result<NsSnapshot> {
    let u = state.eulerian_velocity()?;
    let p = pressure(&u)?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("divergence_residual".to_string(), divergence_residual(&u)?);
    diagnostics.insert("energy".to_string(), 0.5 * u.l2_norm().powi(2));
    diagnostics.insert("enstrophy".to_string(), 0.5 * jacobian(&u)?.l2_norm().powi(2));
    let reconstruction = compose_field(&u, &state.phi)?.sub(&state.v)?.max_abs();
    diagnostics.insert("reconstruction_residual".to_string(), reconstruction);
    diagnostics.insert("jacobian_det_min".to_string(), state.phi.jacobian_det_min());
    for w in &cfg.diagnostic_weights {
        diagnostics.insert(weight_key(w), weighted_norm(&u, w)?);
    }
    Ok(NsSnapshot { time, round, u, p, phi: state.phi.clone(), v: state.v.clone(), diagnostics })
}

/// Runs `cfg.rounds` splitting rounds from an arbitrary Lagrangian state.
/// Output times are snapped to the nearest round boundary. Returns the
/// snapshots and the final state.
pub fn ns_run(initial: &LagrangianState, cfg: &NsConfig) -> Result<(Vec<NsSnapshot>, LagrangianState)> {
    cfg.validate()?;
    if *initial.v.grid() != cfg.grid {
        return Err(Error::GridMismatch);
    }
    let dt = cfg.horizon / cfg.rounds as f64;
    let mut wanted: Vec<usize> = cfg.output_times.iter().map(|&t| cfg.round_for_time(t)).collect();
    wanted.sort_unstable();
    wanted.dedup();
    let euler = EulerFlow { substeps: cfg.euler_substeps_per_round };
    let heat = HeatHalfFlow { nu: cfg.nu };
    let config = cfg.diffeo_config();
    let mut state = initial.clone();
    let mut snapshots = Vec::with_capacity(wanted.len());
    for round in 0..=cfg.rounds {
        if wanted.binary_search(&round).is_ok() {
            snapshots.push(take_snapshot(&state, round as f64 * dt, round, cfg)?);
        }
        if round == cfg.rounds {
            break;
        }
        let wrap = |e: Error| Error::FlowStep { round, source: Box::new(e) };
        state = heat.step(dt, &euler.step(dt, &state).map_err(wrap)?).map_err(wrap)?;
        if let Some(every) = cfg.remesh_every {
            if (round + 1) % every == 0 && round + 1 < cfg.rounds {
                let u = state.eulerian_velocity().map_err(wrap)?;
                state = LagrangianState::new(Diffeo::identity(cfg.grid, config), u)?;
            }
        }
    }
    Ok((snapshots, state))
}

/// Projects `u0`, checks it is band-limited, and runs the splitting from
/// `(id, u0)`.
pub fn ns_solve(u0: &GridField, cfg: &NsConfig) -> Result<Vec<NsSnapshot>> {
    Ok(ns_run(&initial_state(u0, cfg)?, cfg)?.0)
}

pub fn initial_state(u0: &GridField, cfg: &NsConfig) -> Result<LagrangianState> {
    cfg.validate()?;
    u0.expect_rank(1)?;
    if *u0.grid() != cfg.grid {
        return Err(Error::GridMismatch);
    }
    let u = leray_project(u0)?;
    let fraction = high_mode_energy_fraction(&u);
    if fraction > BAND_LIMIT_TOLERANCE {
        return Err(Error::NotBandLimited(fraction));
    }
    LagrangianState::new(Diffeo::identity(cfg.grid, cfg.diffeo_config()), u)
}

/// Distance used by the self-convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceMetric {
    /// `L^2` distance of the Eulerian velocity `u(tau)`.
    Velocity,
    /// `sqrt(||f - f_ref||^2 + ||v - v_ref||^2)` on the Lagrangian state.
    #[default]
    LagrangianState,
}

/// Self-convergence of the splitting: errors at `tau` against a
/// `reference_rounds` run. Runs are independent and execute in parallel.
pub fn ns_convergence_study(
    u0: &GridField,
    cfg_base: &NsConfig,
    n_list: &[usize],
    reference_rounds: usize,
    metric: ConvergenceMetric,
) -> Result<TrotterRun> {
    if n_list.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "convergence study needs at least 3 round counts, got {}",
            n_list.len()
        )));
    }
    if n_list.iter().any(|&n| n >= reference_rounds) {
        return Err(Error::InvalidParameter("reference must use more rounds than every study run".into()));
    }
    let state0 = initial_state(u0, cfg_base)?;
    let final_state = |n: usize| -> Result<LagrangianState> {
        let cfg = NsConfig { rounds: n, output_times: Vec::new(), ..cfg_base.clone() };
        Ok(ns_run(&state0, &cfg)?.1)
    };
    let mut jobs: Vec<usize> = n_list.to_vec();
    jobs.push(reference_rounds);
    let finals = jobs.par_iter().map(|&n| final_state(n)).collect::<Result<Vec<_>>>()?;
    let (reference, runs) = finals.split_last().expect("reference present");
    let reference_u = reference.eulerian_velocity()?;
    let errors = runs
        .iter()
        .map(|s| match metric {
            ConvergenceMetric::LagrangianState => s.distance(reference),
            ConvergenceMetric::Velocity => s.eulerian_velocity()?.l2_distance(&reference_u),
        })
        .collect::<Result<Vec<f64>>>()?;
    let descriptor = format!("ns-splitting[{}]", serde_json::to_value(metric)?.as_str().unwrap_or("metric"));
    TrotterRun::new(&descriptor, cfg_base.horizon, cfg_base.nu, n_list.to_vec(), errors)
}

/// `||u^{(nu)}(tau) - u^{(0)}(tau)||_{L^2}` for each `nu`, descending.
pub fn ns_viscosity_limit_study(u0: &GridField, cfg_base: &NsConfig, nu_list: &[f64]) -> Result<Vec<(f64, f64)>> {
    if nu_list.iter().any(|nu| !(0.0..=1.0).contains(nu)) {
        return Err(Error::InvalidParameter("viscosities must lie in [0, 1]".into()));
    }
    if nu_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("viscosities must be strictly descending".into()));
    }
    let state0 = initial_state(u0, cfg_base)?;
    let final_u = |nu: f64| -> Result<GridField> {
        let cfg = NsConfig { nu, output_times: Vec::new(), ..cfg_base.clone() };
        ns_run(&state0, &cfg)?.1.eulerian_velocity()
    };
    let mut jobs = nu_list.to_vec();
    jobs.push(0.0);
    let finals = jobs.par_iter().map(|&nu| final_u(nu)).collect::<Result<Vec<_>>>()?;
    let (inviscid, rest) = finals.split_last().expect("inviscid run present");
    nu_list.iter().zip(rest).map(|(&nu, u)| Ok((nu, u.l2_distance(inviscid)?))).collect()
}

/// Recorded relative divergence residual per snapshot.
pub fn divergence_history(snapshots: &[NsSnapshot]) -> Vec<(f64, f64)> {
    snapshots.iter().map(|s| (s.time, s.diagnostics.get("divergence_residual").copied().unwrap_or(f64::NAN))).collect()
}

/// Weighted norms of `p` plus `sup |grad p|` in the outer shell and in the
/// interior of the box.
pub fn pressure_decay_report(snapshot: &NsSnapshot, weights: &[WeightSpec]) -> Result<BTreeMap<String, f64>> {
    let p = &snapshot.p;
    let grid = *p.grid();
    let mut report = BTreeMap::new();
    for w in weights {
        report.insert(weight_key(w), weighted_norm(p, w)?);
    }
    let grad = gradient(p)?;
    let d = grid.dim();
    let edge = (1.0 - PRESSURE_SHELL) * grid.half_width();
    let (mut shell, mut interior) = (0.0f64, 0.0f64);
    for i in 0..grid.len() {
        let x = grid.point(i);
        let mag = (0..d).map(|a| grad.component(a)[i].powi(2)).sum::<f64>().sqrt();
        if x[..d].iter().any(|xi| xi.abs() >= edge) {
            shell = shell.max(mag);
        } else {
            interior = interior.max(mag);
        }
    }
    report.insert("outer_shell_grad_sup".to_string(), shell);
    report.insert("interior_grad_sup".to_string(), interior);
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub time: f64,
    pub round: usize,
    pub diagnostics: BTreeMap<String, f64>,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub config: NsConfig,
    pub config_hash: String,
    pub times: Vec<f64>,
    pub snapshots: Vec<ManifestEntry>,
}

/// Writes every snapshot's `u`, `p`, `phi` and `v` as binary fields plus a
/// `manifest.json`.
pub fn write_snapshot_archive(dir: &Path, cfg: &NsConfig, snapshots: &[NsSnapshot]) -> Result<SnapshotManifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(snapshots.len());
    for (i, s) in snapshots.iter().enumerate() {
        let mut files = BTreeMap::new();
        for (name, field) in [("u", &s.u), ("p", &s.p), ("v", &s.v)] {
            let file = format!("snap{i:04}_{name}.bin");
            field.write_binary(&dir.join(&file))?;
            files.insert(name.to_string(), file);
        }
        let file = format!("snap{i:04}_phi.bin");
        s.phi.save(&dir.join(&file))?;
        files.insert("phi".to_string(), file);
        entries.push(ManifestEntry { time: s.time, round: s.round, diagnostics: s.diagnostics.clone(), files });
    }
    let manifest = SnapshotManifest {
        config: cfg.clone(),
        config_hash: cfg.content_hash()?,
        times: snapshots.iter().map(|s| s.time).collect(),
        snapshots: entries,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Taylor-Green vortex `A (sin x cos y, -cos x sin y)` on `[-pi, pi)^2`.
pub fn taylor_green(grid: Grid, amplitude: f64) -> Result<GridField> {
    if grid.dim() != 2 {
        return Err(Error::InvalidParameter("taylor-green data is planar".into()));
    }
    GridField::from_vector_fn(grid, |x, o| {
        o[0] = amplitude * x[0].sin() * x[1].cos();
        o[1] = -amplitude * x[0].cos() * x[1].sin();
    })
}

/// Windowed Lamb-Oseen vorticity
/// `Gamma / (4 pi nu s) exp(-r^2 / (4 nu s))`, `s = t + t0`, with its mean
/// removed so that it has a periodic stream function.
pub fn lamb_oseen_vorticity(grid: Grid, circulation: f64, nu: f64, s: f64) -> Result<GridField> {
    if grid.dim() != 2 {
        return Err(Error::InvalidParameter("lamb-oseen data is planar".into()));
    }
    if !(nu > 0.0 && s > 0.0) {
        return Err(Error::InvalidParameter("lamb-oseen profile needs nu > 0 and s > 0".into()));
    }
    let spread = 4.0 * nu * s;
    let omega = windowed_scalar(grid, |x| circulation / (PI * spread) * (-(x[0] * x[0] + x[1] * x[1]) / spread).exp())?;
    let mean = omega.mean(0);
    let values = omega.values().iter().map(|w| w - mean).collect();
    GridField::new(grid, 0, values)
}

/// Velocity of [`lamb_oseen_vorticity`] via planar Biot-Savart.
pub fn lamb_oseen_velocity(grid: Grid, circulation: f64, nu: f64, s: f64) -> Result<GridField> {
    biot_savart_2d(&lamb_oseen_vorticity(grid, circulation, nu, s)?)
}

/// Zero-circulation vortex with windowed stream function
/// `A exp(-r^2 / (2 sigma^2))` and `u = (d_y psi, -d_x psi)`.
pub fn shielded_vortex(grid: Grid, amplitude: f64, sigma: f64) -> Result<GridField> {
    if grid.dim() != 2 {
        return Err(Error::InvalidParameter("shielded vortex is planar".into()));
    }
    let s2 = sigma * sigma;
    let psi = windowed_scalar(grid, |x| amplitude * (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * s2)).exp())?;
    let grad = gradient(&psi)?;
    let ux = grad.component(1).to_vec();
    let uy = grad.component(0).iter().map(|v| -v).collect();
    GridField::from_components(grid, 1, vec![ux, uy])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::curl_2d;
    use crate::heat::{heat_apply, HeatParams};

    fn grid(n: usize) -> Grid {
        Grid::new(2, n, PI).unwrap()
    }

    #[test]
    fn config_validation() {
        let g = grid(16);
        assert!(NsConfig::new(g, 1.5, 1.0, 4).validate().is_err());
        assert!(NsConfig::new(g, 0.1, 0.0, 4).validate().is_err());
        assert!(NsConfig::new(g, 0.1, 1.0, 0).validate().is_err());
        let mut cfg = NsConfig::new(g, 0.1, 1.0, 4);
        cfg.output_times = vec![0.0, 1.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn content_hash_is_stable_and_sensitive() {
        let cfg = NsConfig::new(grid(16), 0.1, 1.0, 4);
        let h = cfg.content_hash().unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, cfg.clone().content_hash().unwrap());
        let other = NsConfig { nu: 0.2, ..cfg };
        assert_ne!(h, other.content_hash().unwrap());
    }

    #[test]
    fn heat_half_map_zero_viscosity_and_identity() {
        let g = grid(32);
        let u = taylor_green(g, 1.0).unwrap();
        let s = LagrangianState::new(Diffeo::identity(g, DiffeoConfig::default()), u.clone()).unwrap();
        let same = heat_half_map(&s, 0.3, 0.0).unwrap();
        assert_eq!(same.v, s.v);
        let flowed = heat_half_map(&s, 0.3, 0.5).unwrap();
        assert_eq!(flowed.v, heat_apply(&u, &HeatParams::spectral(0.15)).unwrap());
        assert!(heat_half_map(&s, -1.0, 0.5).is_err());
    }

    #[test]
    fn heat_half_map_acts_componentwise() {
        let g = grid(32);
        let f = GridField::from_vector_fn(g, |x, o| {
            o[0] = 0.1 * x[1].sin();
            o[1] = 0.08 * (x[0] + x[1]).cos();
        })
        .unwrap();
        let phi = Diffeo::new(f, DiffeoConfig::with_interpolation(Interpolation::Trigonometric)).unwrap();
        let v = GridField::from_vector_fn(g, |x, o| {
            o[0] = (2.0 * x[0]).cos() + x[1].sin();
            o[1] = (x[0] - x[1]).sin();
        })
        .unwrap();
        let s = LagrangianState::new(phi.clone(), v.clone()).unwrap();
        let both = heat_half_map(&s, 0.2, 0.4).unwrap();
        for c in 0..2 {
            let mut only = GridField::zeros(g, 1);
            only.component_mut(c).copy_from_slice(v.component(c));
            let single = heat_half_map(&LagrangianState::new(phi.clone(), only).unwrap(), 0.2, 0.4).unwrap();
            let diff =
                single.v.component(c).iter().zip(both.v.component(c)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-14, "component {c}: {diff}");
        }
    }

    #[test]
    fn rest_state_stays_at_rest() {
        let g = grid(16);
        let mut cfg = NsConfig::new(g, 0.3, 0.5, 4);
        cfg.output_times = vec![0.0, 0.25, 0.5];
        let snaps = ns_solve(&GridField::zeros(g, 1), &cfg).unwrap();
        assert_eq!(snaps.len(), 3);
        for s in &snaps {
            assert_eq!(s.u.max_abs(), 0.0);
            assert_eq!(s.p.max_abs(), 0.0);
        }
    }

    #[test]
    fn rejects_rough_initial_data() {
        let g = grid(16);
        let u = GridField::from_vector_fn(g, |x, o| {
            o[0] = (7.0 * x[1]).sin();
            o[1] = 0.0;
        })
        .unwrap();
        assert!(matches!(ns_solve(&u, &NsConfig::new(g, 0.1, 0.5, 4)), Err(Error::NotBandLimited(_))));
    }

    #[test]
    fn inviscid_taylor_green_is_steady() {
        let g = grid(64);
        let u0 = taylor_green(g, 1.0).unwrap();
        let cfg = NsConfig::new(g, 0.0, 0.5, 16);
        let snaps = ns_solve(&u0, &cfg).unwrap();
        let err = snaps[0].u.sub(&u0).unwrap().max_abs();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn inviscid_run_equals_pure_euler() {
        let g = grid(32);
        let u0 = taylor_green(g, 1.0).unwrap();
        let mut cfg = NsConfig::new(g, 0.0, 0.2, 4);
        cfg.euler_substeps_per_round = Some(2);
        let state0 = initial_state(&u0, &cfg).unwrap();
        let (_, split) = ns_run(&state0, &cfg).unwrap();
        let mut pure = state0;
        for _ in 0..4 {
            pure = euler_step(&pure, 0.05, 2).unwrap();
        }
        assert_eq!(split.v, pure.v);
        assert_eq!(split.phi.displacement(), pure.phi.displacement());
    }

    #[test]
    fn taylor_green_pressure_from_momentum_balance() {
        // steady Euler: u.grad u = -grad p gives p = (cos 2x + cos 2y) / 4
        let g = grid(32);
        let p = pressure(&taylor_green(g, 1.0).unwrap()).unwrap();
        let exact = GridField::from_scalar_fn(g, |x| ((2.0 * x[0]).cos() + (2.0 * x[1]).cos()) / 4.0).unwrap();
        assert!(p.sub(&exact).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn output_times_snap_to_rounds() {
        let cfg = NsConfig::new(grid(16), 0.1, 1.0, 8);
        assert_eq!(cfg.round_for_time(0.0), 0);
        assert_eq!(cfg.round_for_time(0.3), 2);
        assert_eq!(cfg.round_for_time(1.0), 8);
    }

    #[test]
    fn convergence_study_needs_three_runs() {
        let g = grid(16);
        let u0 = taylor_green(g, 1.0).unwrap();
        let cfg = NsConfig::new(g, 0.01, 0.1, 4);
        assert!(matches!(
            ns_convergence_study(&u0, &cfg, &[4], 8, ConvergenceMetric::default()),
            Err(Error::InsufficientData(_))
        ));
        assert!(ns_convergence_study(&u0, &cfg, &[2, 4, 8], 8, ConvergenceMetric::default()).is_err());
    }

    #[test]
    fn viscosity_limit_with_only_inviscid_run() {
        let g = grid(16);
        let u0 = taylor_green(g, 1.0).unwrap();
        let cfg = NsConfig::new(g, 0.0, 0.1, 4);
        let out = ns_viscosity_limit_study(&u0, &cfg, &[0.0]).unwrap();
        assert_eq!(out, vec![(0.0, 0.0)]);
        assert!(ns_viscosity_limit_study(&u0, &cfg, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn lamb_oseen_profile_is_zero_mean_and_consistent() {
        let g = Grid::new(2, 64, PI).unwrap();
        let omega = lamb_oseen_vorticity(g, 1.0, 0.01, 4.0).unwrap();
        assert!(omega.mean(0).abs() < 1e-14);
        let u = lamb_oseen_velocity(g, 1.0, 0.01, 4.0).unwrap();
        assert!(curl_2d(&u).unwrap().sub(&omega).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn pressure_report_for_rest_state_is_zero() {
        let g = grid(16);
        let cfg = NsConfig::new(g, 0.1, 0.1, 1);
        let snaps = ns_solve(&GridField::zeros(g, 1), &cfg).unwrap();
        let report = pressure_decay_report(&snaps[0], &[WeightSpec::new(0, 2.0, 1.0).unwrap()]).unwrap();
        assert!(report.values().all(|v| *v == 0.0));
    }

    #[test]
    fn archive_writes_manifest_and_fields() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(16);
        let mut cfg = NsConfig::new(g, 0.05, 0.2, 4);
        cfg.output_times = vec![0.0, 0.2];
        let snaps = ns_solve(&taylor_green(g, 0.5).unwrap(), &cfg).unwrap();
        let manifest = write_snapshot_archive(dir.path(), &cfg, &snaps).unwrap();
        assert_eq!(manifest.times, vec![0.0, 0.2]);
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let back: SnapshotManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config_hash, cfg.content_hash().unwrap());
        let u = GridField::read_binary(&dir.path().join(&back.snapshots[1].files["u"])).unwrap();
        assert_eq!(u, snaps[1].u);
        let phi = Diffeo::load(&dir.path().join(&back.snapshots[1].files["phi"])).unwrap();
        assert_eq!(phi.displacement(), snaps[1].phi.displacement());
    }
}
