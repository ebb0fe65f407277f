//! Experiment runners. Each returns a results table, summary metrics and
//! threshold checks; numerical failures come back as `viscosplit::Error`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use viscosplit::error::Result;
use viscosplit::fields::{gradient, WeightSpec};
use viscosplit::grid::{Grid, GridField};
use viscosplit::heat::heat_growth_probe;
use viscosplit::nssolver::{
    initial_state, lamb_oseen_velocity, ns_convergence_study, ns_solve, ns_viscosity_limit_study, shielded_vortex,
    take_snapshot, taylor_green, write_snapshot_archive, EulerFlow, HeatHalfFlow, NsConfig,
};
use viscosplit::rng;
use viscosplit::trotter::{
    commutator_defect, finsler_norm_probe, fit_growth_rate, lipschitz_probe, matrix_flow_bound, MatrixFlow,
    MatrixTestbed,
};

use crate::config::{ExperimentConfig, FinslerProbe, HeatBound, InitialData, MatrixTrotter, NsSetup, Parameters};

/// A rectangular table written as `results.csv`.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: Value,
    pub pass: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub results: Table,
    pub metrics: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
}

impl Report {
    fn check(&mut self, name: &str, value: Value, pass: bool) {
        self.checks.push(Check { name: name.to_string(), value, pass });
    }
}

fn num(x: f64) -> String {
    if x != 0.0 && !(1e-3..1e7).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn threshold(cfg: &ExperimentConfig, key: &str) -> f64 {
    cfg.thresholds[key].as_f64().expect("numeric threshold")
}

fn random_modes(grid: Grid, amplitude: f64, kmax: usize, seed: u64) -> Result<GridField> {
    let mut r = rng::seeded(seed, rng::streams::FIELDS);
    let k = kmax as i64;
    let mut terms = Vec::new();
    for kx in -k..=k {
        for ky in -k..=k {
            if kx == 0 && ky == 0 {
                continue;
            }
            let a: f64 = StandardNormal.sample(&mut r);
            let phase = r.gen::<f64>() * std::f64::consts::TAU;
            terms.push((kx as f64, ky as f64, a / ((kx * kx + ky * ky) as f64), phase));
        }
    }
    let scale = grid.half_width() / std::f64::consts::PI;
    let psi = GridField::from_scalar_fn(grid, |x| {
        terms.iter().map(|(kx, ky, a, ph)| a * ((kx * x[0] + ky * x[1]) / scale + ph).cos()).sum()
    })?;
    let grad = gradient(&psi)?;
    let u = GridField::from_components(
        grid,
        1,
        vec![grad.component(1).to_vec(), grad.component(0).iter().map(|v| -v).collect()],
    )?;
    let peak = u.max_magnitude();
    Ok(if peak > 0.0 { u.scaled(amplitude / peak) } else { u })
}

fn initial_velocity(setup: &NsSetup, seed: u64) -> Result<GridField> {
    let grid = setup.ns.grid;
    match setup.initial {
        InitialData::TaylorGreen { amplitude } => taylor_green(grid, amplitude),
        InitialData::LambOseen { circulation, t0 } => lamb_oseen_velocity(grid, circulation, setup.ns.nu, t0),
        InitialData::ShieldedVortex { amplitude, sigma } => shielded_vortex(grid, amplitude, sigma),
        InitialData::RandomModes { amplitude, kmax } => random_modes(grid, amplitude, kmax, seed),
    }
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    match &cfg.parameters {
        Parameters::Simulate(setup) => simulate(cfg, setup, out),
        Parameters::Converge { ns, n_list, reference_rounds, metric } => {
            let u0 = initial_velocity(ns, cfg.seed)?;
            let run = ns_convergence_study(&u0, &ns.ns, n_list, *reference_rounds, *metric)?;
            trotter_report(cfg, &run, None, false)
        }
        Parameters::ViscosityLimit { ns, nu_list } => viscosity_limit(cfg, ns, nu_list),
        Parameters::HeatBound(hb) => heat_bound(cfg, hb),
        Parameters::Commutator { ns, t_min, t_max, points } => commutator(cfg, ns, *t_min, *t_max, *points),
        Parameters::MatrixTrotter(mt) => matrix_trotter(cfg, mt),
        Parameters::FinslerProbe(fp) => finsler_probe(cfg, fp),
    }
}

fn simulate(cfg: &ExperimentConfig, setup: &NsSetup, out: &Path) -> Result<Report> {
    let u0 = initial_velocity(setup, cfg.seed)?;
    let snapshots = if setup.ns.horizon == 0.0 {
        let probe = NsConfig { horizon: 1.0, ..setup.ns.clone() };
        vec![take_snapshot(&initial_state(&u0, &probe)?, 0.0, 0, &probe)?]
    } else {
        ns_solve(&u0, &setup.ns)?
    };
    let manifest = write_snapshot_archive(&out.join("snapshots"), &setup.ns, &snapshots)?;
    let keys: Vec<String> = snapshots.first().map(|s| s.diagnostics.keys().cloned().collect()).unwrap_or_default();
    let mut header = vec!["time".to_string(), "round".to_string()];
    header.extend(keys.iter().cloned());
    let mut report = Report { results: Table { header, rows: Vec::new() }, ..Default::default() };
    for s in &snapshots {
        let mut row = vec![num(s.time), s.round.to_string()];
        row.extend(keys.iter().map(|k| num(s.diagnostics[k])));
        report.results.push(row);
    }
    let worst = snapshots.iter().map(|s| s.diagnostics["divergence_residual"]).fold(0.0, f64::max);
    report.metrics.insert("snapshots".into(), json!(snapshots.len()));
    report.metrics.insert("config_hash".into(), json!(manifest.config_hash));
    report.check("max_divergence_residual", json!(worst), worst <= threshold(cfg, "max_divergence_residual"));
    Ok(report)
}

fn trotter_report(
    cfg: &ExperimentConfig,
    run: &viscosplit::trotter::TrotterRun,
    beta_hat: Option<f64>,
    with_r2: bool,
) -> Result<Report> {
    let mut buf = Vec::new();
    run.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).expect("ascii csv");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let mut report = Report { results: Table::new(&header), ..Default::default() };
    for line in lines {
        report.results.push(line.split(',').map(str::to_string).collect());
    }
    if let Value::Object(map) = run.summary_json(beta_hat) {
        report.metrics.extend(map);
    }
    let (lo, hi) = (threshold(cfg, "slope_min"), threshold(cfg, "slope_max"));
    report.check("fitted_slope", json!(run.fitted_slope), (lo..=hi).contains(&run.fitted_slope));
    if with_r2 {
        report.check("fit_r2", json!(run.fit_r2), run.fit_r2 >= threshold(cfg, "r2_min"));
    } else {
        let (rlo, rhi) = (threshold(cfg, "ratio_min"), threshold(cfg, "ratio_max"));
        let ratios = run.doubling_ratios();
        let ok = !ratios.is_empty() && ratios.iter().all(|(_, r)| (rlo..=rhi).contains(r));
        report.check("doubling_ratios", json!(ratios), ok);
    }
    Ok(report)
}

fn viscosity_limit(cfg: &ExperimentConfig, setup: &NsSetup, nu_list: &[f64]) -> Result<Report> {
    let u0 = initial_velocity(setup, cfg.seed)?;
    let diffs = ns_viscosity_limit_study(&u0, &setup.ns, nu_list)?;
    let mut report = Report { results: Table::new(&["nu", "difference"]), ..Default::default() };
    for (nu, d) in &diffs {
        report.results.push(vec![num(*nu), num(*d)]);
    }
    let decreasing = diffs.windows(2).all(|w| w[1].1 < w[0].1);
    if cfg.thresholds["strictly_decreasing"].as_bool() == Some(true) {
        report.check("strictly_decreasing", json!(decreasing), decreasing);
    }
    let (first, last) = (diffs[0].1, diffs[diffs.len() - 1].1);
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    report.check("final_over_first", json!(ratio), ratio <= threshold(cfg, "final_over_first_max"));
    Ok(report)
}

fn heat_bound(cfg: &ExperimentConfig, hb: &HeatBound) -> Result<Report> {
    let s2 = hb.sigma * hb.sigma;
    let bump = GridField::from_scalar_fn(hb.grid, |x| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2)).exp())?;
    let mut report =
        Report { results: Table::new(&["delta", "t", "ratio", "ratio_over_initial"]), ..Default::default() };
    let mut worst: f64 = 0.0;
    for &delta in &hb.deltas {
        let w = WeightSpec::new(hb.m, hb.p, delta)?;
        let ratios = heat_growth_probe(&bump, &w, &hb.times)?;
        let r0 = ratios[0].1;
        for (t, r) in ratios {
            worst = worst.max(r / r0);
            report.results.push(vec![num(delta), num(t), num(r), num(r / r0)]);
        }
    }
    report.check("max_ratio_over_initial", json!(worst), worst <= threshold(cfg, "max_ratio_over_initial"));
    Ok(report)
}

fn commutator(cfg: &ExperimentConfig, setup: &NsSetup, t_min: f64, t_max: f64, points: usize) -> Result<Report> {
    let u0 = initial_velocity(setup, cfg.seed)?;
    let z = initial_state(&u0, &setup.ns)?;
    let ts: Vec<f64> = (0..points).map(|i| t_min * (t_max / t_min).powf(i as f64 / (points - 1) as f64)).collect();
    let euler = EulerFlow { substeps: setup.ns.euler_substeps_per_round };
    let defect = commutator_defect(&euler, &HeatHalfFlow { nu: setup.ns.nu }, &z, &ts)?;
    let mut report = Report { results: Table::new(&["t", "defect"]), ..Default::default() };
    for (t, d) in &defect.samples {
        report.results.push(vec![num(*t), num(*d)]);
    }
    report.metrics.insert("fit_all".into(), json!(defect.fit_all));
    report.metrics.insert("fit_smallest_decade".into(), json!(defect.fit_smallest_decade));
    let slope = defect.fit_all.map(|f| f.slope).unwrap_or(f64::NAN);
    let ok = (threshold(cfg, "slope_min")..=threshold(cfg, "slope_max")).contains(&slope);
    report.check("fitted_slope", json!(slope), ok);
    Ok(report)
}

fn matrix_trotter(cfg: &ExperimentConfig, mt: &MatrixTrotter) -> Result<Report> {
    let tb = MatrixTestbed::random(mt.size, cfg.seed);
    let run = tb.trotter_run(mt.t, &mt.n_list)?;
    let mut r = rng::seeded(cfg.seed, rng::streams::TANGENTS);
    let shift = DVector::from_fn(mt.size, |_, _| -> f64 { StandardNormal.sample(&mut r) }) * 0.1;
    let z2 = &tb.z + shift;
    let ratios = lipschitz_probe(&tb.g_flow(), &tb.s_flow(), mt.lipschitz_rounds, &tb.z, &z2, &mt.lipschitz_times)?;
    trotter_report(cfg, &run, Some(fit_growth_rate(&ratios)), true)
}

fn finsler_probe(cfg: &ExperimentConfig, fp: &FinslerProbe) -> Result<Report> {
    let tb = MatrixTestbed::random(fp.size, cfg.seed);
    let generator = &tb.a + &tb.b;
    let flow = MatrixFlow::new(generator.clone(), "exp(t(A+B))");
    let ts: Vec<f64> = (0..fp.t_points).map(|i| fp.t_max * i as f64 / (fp.t_points - 1) as f64).collect();
    let m_hat = matrix_flow_bound(&generator, fp.beta, &ts)?;
    let mut r = rng::seeded(cfg.seed, rng::streams::TANGENTS);
    let mut report = Report { results: Table::new(&["sample", "xi_norm", "probe", "ratio"]), ..Default::default() };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..fp.samples {
        let xi = DVector::from_fn(fp.size, |_, _| -> f64 { StandardNormal.sample(&mut r) });
        let probe = finsler_norm_probe(&flow, &tb.z, &xi, fp.beta, &ts, fp.fd_eps)?;
        let ratio = probe / xi.norm();
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        report.results.push(vec![i.to_string(), num(xi.norm()), num(probe), num(ratio)]);
    }
    let slack = threshold(cfg, "relative_slack");
    report.metrics.insert("M_hat".into(), json!(m_hat));
    report.check("lower_bound", json!(lo), lo >= 1.0 - slack);
    report.check("upper_bound", json!(hi / m_hat), hi <= m_hat * (1.0 + slack));
    Ok(report)
}
