use std::f64::consts::PI;

use rand::Rng;

use viscosplit::diffeo::{jacobian_det, Diffeo, DiffeoConfig};
use viscosplit::euler::{euler_generator, euler_step, leray_project, LagrangianState};
use viscosplit::fields::{curl_2d, weighted_norm, weighted_sup, windowed_scalar, WeightSpec};
use viscosplit::grid::{Grid, GridField};
use viscosplit::interp::Interpolation;
use viscosplit::nssolver::{
    initial_state, ns_run, ns_solve, pressure_decay_report, shielded_vortex, taylor_green, NsConfig,
};
use viscosplit::rng;

fn tg_grid(n: usize) -> Grid {
    Grid::new(2, n, PI).unwrap()
}

/// Largest `sup <x>^{delta + d/p} |f| / ||f||_{m,p,delta}` over a seeded
/// corpus of 20 localized fields.
fn decay_constant(n: usize) -> (f64, f64) {
    let g = Grid::new(2, n, 8.0).unwrap();
    let w = WeightSpec::new(2, 2.0, 0.5).unwrap();
    let mut r = rng::seeded(7, rng::streams::FIELDS);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..20 {
        let (cx, cy) = (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let width: f64 = r.gen_range(0.6..1.5);
        let amp: f64 = r.gen_range(0.5..2.0);
        let f =
            windowed_scalar(g, |x| amp * (-((x[0] - cx).powi(2) + (x[1] - cy).powi(2)) / (2.0 * width * width)).exp())
                .unwrap();
        let ratio = weighted_sup(&f, &w) / weighted_norm(&f, &w).unwrap();
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    (lo, hi)
}

#[test]
fn decay_probe_constant_is_resolution_independent() {
    let (lo64, c64) = decay_constant(64);
    let (_, c128) = decay_constant(128);
    assert!(lo64 > 0.0 && c64.is_finite());
    assert!((c128 / c64 - 1.0).abs() < 0.01, "C = {c64} at 64, {c128} at 128");
}

/// Fourth-order central-difference `det(I + df)` for a planar displacement.
fn fd_jacobian_det(f: &GridField) -> Vec<f64> {
    let g = *f.grid();
    let n = g.points_per_axis();
    let h = g.spacing();
    let at = |c: usize, i: usize, j: usize| f.component(c)[(i % n) * n + j % n];
    let d = |c: usize, i: usize, j: usize, axis: usize| {
        let (p1, p2, m1, m2) = if axis == 0 {
            (at(c, i + 1, j), at(c, i + 2, j), at(c, i + n - 1, j), at(c, i + n - 2, j))
        } else {
            (at(c, i, j + 1), at(c, i, j + 2), at(c, i, j + n - 1), at(c, i, j + n - 2))
        };
        (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
    };
    (0..g.len())
        .map(|k| {
            let (i, j) = (k / n, k % n);
            (1.0 + d(0, i, j, 0)) * (1.0 + d(1, i, j, 1)) - d(0, i, j, 1) * d(1, i, j, 0)
        })
        .collect()
}

#[test]
fn spectral_jacobian_matches_fourth_order_differences() {
    let error = |n: usize| {
        let g = tg_grid(n);
        let f = GridField::from_vector_fn(g, |x, o| {
            o[0] = 0.2 * (x[0] + 0.3).sin() * x[1].cos();
            o[1] = 0.15 * (2.0 * x[0]).cos() * (x[1] - 0.2).sin();
        })
        .unwrap();
        let spectral = jacobian_det(&f).unwrap();
        spectral.values().iter().zip(fd_jacobian_det(&f)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (e16, e32) = (error(16), error(32));
    assert!(e16 / e32 > 12.0, "{e16} -> {e32}");
}

#[test]
fn euler_step_conserves_taylor_green_energy() {
    let g = tg_grid(64);
    let cfg = NsConfig { interpolation: Interpolation::Trigonometric, ..NsConfig::new(g, 0.0, 0.5, 1) };
    let s0 = initial_state(&taylor_green(g, 1.0).unwrap(), &cfg).unwrap();
    let energy = |s: &LagrangianState| s.eulerian_velocity().unwrap().l2_norm().powi(2);
    let e0 = energy(&s0);
    let mut s = s0;
    for _ in 0..5 {
        s = euler_step(&s, 0.1, 4).unwrap();
        let rel = (energy(&s) / e0 - 1.0).abs();
        assert!(rel <= 1e-6, "{rel}");
    }
}

#[test]
fn generator_acceleration_is_curl_free_at_identity() {
    let g = tg_grid(32);
    let u = GridField::from_vector_fn(g, |x, o| {
        o[0] = (x[1]).sin() + 0.3 * (2.0 * x[0] + x[1]).cos();
        o[1] = 0.5 * (x[0]).cos() - 0.2 * (x[0] - 3.0 * x[1]).sin();
    })
    .unwrap();
    let u = leray_project(&u).unwrap();
    let s = LagrangianState::new(Diffeo::identity(g, DiffeoConfig::default()), u).unwrap();
    let (_, accel) = euler_generator(&s).unwrap();
    assert!(curl_2d(&accel).unwrap().max_abs() <= 1e-10);
}

#[test]
fn splitting_rounds_regroup() {
    let g = tg_grid(32);
    let u0 = shielded_vortex(g, 0.4, 0.6).unwrap();
    let cfg = NsConfig::new(g, 0.05, 0.4, 8);
    let s0 = initial_state(&u0, &cfg).unwrap();
    let (_, whole) = ns_run(&s0, &cfg).unwrap();
    let half = NsConfig { horizon: 0.2, rounds: 4, output_times: Vec::new(), ..cfg.clone() };
    let (_, mid) = ns_run(&s0, &half).unwrap();
    let (_, end) = ns_run(&mid, &half).unwrap();
    let df = whole.phi.displacement().sub(end.phi.displacement()).unwrap().max_abs();
    let dv = whole.v.sub(&end.v).unwrap().max_abs();
    assert!(df <= 1e-12 && dv <= 1e-12, "{df} {dv}");
}

#[test]
fn viscous_energy_never_increases() {
    let g = tg_grid(32);
    let u0 = shielded_vortex(g, 0.5, 0.5).unwrap().add(&taylor_green(g, 0.3).unwrap()).unwrap();
    let mut cfg = NsConfig::new(g, 0.05, 0.5, 16);
    cfg.output_times = (0..=8).map(|k| 0.5 * k as f64 / 8.0).collect();
    let snaps = ns_solve(&u0, &cfg).unwrap();
    for w in snaps.windows(2) {
        let (a, b) = (w[0].diagnostics["energy"], w[1].diagnostics["energy"]);
        assert!(b <= a + 1e-8, "energy rose from {a} to {b} at t = {}", w[1].time);
    }
}

#[test]
fn velocity_reconstruction_stays_within_interpolation_tolerance() {
    let g = tg_grid(64);
    let u0 = shielded_vortex(g, 0.5, 0.5).unwrap();
    let mut cfg = NsConfig::new(g, 0.01, 0.5, 16);
    cfg.interpolation = Interpolation::Trigonometric;
    cfg.output_times = vec![0.0, 0.25, 0.5];
    for snap in ns_solve(&u0, &cfg).unwrap() {
        let residual = snap.diagnostics["reconstruction_residual"];
        assert!(residual <= 1e-6, "t = {}: {residual}", snap.time);
    }
}

#[test]
fn localized_vortex_pressure_gradient_vanishes_near_the_boundary() {
    let g = tg_grid(64);
    let cfg = NsConfig::new(g, 0.01, 0.1, 4);
    let snaps = ns_solve(&shielded_vortex(g, 0.5, 0.5).unwrap(), &cfg).unwrap();
    let report = pressure_decay_report(&snaps[0], &[WeightSpec::new(1, 2.0, 1.0).unwrap()]).unwrap();
    let (shell, interior) = (report["outer_shell_grad_sup"], report["interior_grad_sup"]);
    assert!(interior > 0.0);
    assert!(shell <= 1e-3 * interior, "{shell} vs {interior}");
    assert!(report["weighted_norm_m1_p2_delta1"] > 0.0);
}

#[test]
fn taylor_green_divergence_stays_small_without_reprojection() {
    let g = tg_grid(64);
    let mut cfg = NsConfig::new(g, 0.01, 0.5, 64);
    cfg.output_times = vec![0.0, 0.25, 0.5];
    let snaps = ns_solve(&taylor_green(g, 1.0).unwrap(), &cfg).unwrap();
    assert!(snaps[0].diagnostics["divergence_residual"] <= 1e-12);
    for s in &snaps {
        assert!(s.diagnostics["divergence_residual"] <= 1e-4, "t = {}", s.time);
    }
}
