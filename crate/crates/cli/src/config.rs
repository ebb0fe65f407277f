//! Strict TOML experiment configuration.
//!
//! A config file has a few top-level keys plus two tables:
//!
//! ```toml
//! experiment = "converge"      # optional, must match the command if given
//! seed = 42                    # optional, --seed overrides
//! output_dir = "runs/converge" # optional, --out overrides
//!
//! [parameters]                 # experiment-specific, unknown keys rejected
//! nu = 0.01
//!
//! [thresholds]                 # pass/fail limits, echoed into summary.json
//! slope_max = -0.9
//! ```
//!
//! Any parameter left out takes a documented default; every default that
//! was used is recorded and echoed under `defaults` in the outputs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use viscosplit::fields::WeightSpec;
use viscosplit::grid::Grid;
use viscosplit::interp::Interpolation;
use viscosplit::nssolver::{ConvergenceMetric, NsConfig};

#[derive(Debug, Clone)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Converge,
    ViscosityLimit,
    HeatBound,
    Commutator,
    MatrixTrotter,
    FinslerProbe,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Converge => "converge",
            Self::ViscosityLimit => "viscosity-limit",
            Self::HeatBound => "heat-bound",
            Self::Commutator => "commutator",
            Self::MatrixTrotter => "matrix-trotter",
            Self::FinslerProbe => "finsler-probe",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<ExperimentKind>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    parameters: toml::Table,
    #[serde(default)]
    thresholds: toml::Table,
}

/// Records every default that was filled in.
#[derive(Debug, Default, Clone, Serialize)]
pub struct Defaults(pub BTreeMap<String, Value>);

impl Defaults {
    pub fn take<T: Serialize>(&mut self, key: &str, given: Option<T>, default: T) -> T {
        given.unwrap_or_else(|| {
            self.0.insert(key.to_string(), serde_json::to_value(&default).unwrap_or(Value::Null));
            default
        })
    }
}

/// A fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parameters: Parameters,
    pub thresholds: BTreeMap<String, Value>,
    pub defaults: Defaults,
    /// The config document as written.
    pub source: Value,
}

#[derive(Debug, Clone)]
pub enum Parameters {
    Simulate(NsSetup),
    Converge { ns: NsSetup, n_list: Vec<usize>, reference_rounds: usize, metric: ConvergenceMetric },
    ViscosityLimit { ns: NsSetup, nu_list: Vec<f64> },
    HeatBound(HeatBound),
    Commutator { ns: NsSetup, t_min: f64, t_max: f64, points: usize },
    MatrixTrotter(MatrixTrotter),
    FinslerProbe(FinslerProbe),
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GridInput {
    dim: Option<usize>,
    n: Option<usize>,
    half_width: Option<f64>,
}

fn resolve_grid(input: Option<GridInput>, defaults: &mut Defaults, n: usize, half_width: f64) -> ConfigResult<Grid> {
    let g = input.unwrap_or(GridInput { dim: None, n: None, half_width: None });
    let dim = defaults.take("grid.dim", g.dim, 2);
    let n = defaults.take("grid.n", g.n, n);
    let half_width = defaults.take("grid.half_width", g.half_width, half_width);
    Grid::new(dim, n, half_width).map_err(|e| invalid(format!("grid: {e}")))
}

/// Initial velocity for the Navier-Stokes experiments.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    TaylorGreen {
        amplitude: f64,
    },
    LambOseen {
        circulation: f64,
        t0: f64,
    },
    ShieldedVortex {
        amplitude: f64,
        sigma: f64,
    },
    /// Seeded divergence-free field with modes `|k_i| <= kmax`.
    RandomModes {
        amplitude: f64,
        kmax: usize,
    },
}

#[derive(Debug, Clone)]
pub struct NsSetup {
    pub ns: NsConfig,
    pub initial: InitialData,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightInput {
    m: usize,
    p: f64,
    delta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NsInput {
    grid: Option<GridInput>,
    nu: Option<f64>,
    horizon: Option<f64>,
    rounds: Option<usize>,
    euler_substeps: Option<usize>,
    interpolation: Option<Interpolation>,
    output_times: Option<Vec<f64>>,
    remesh_every: Option<usize>,
    weights: Option<Vec<WeightInput>>,
    initial: Option<InitialData>,
    // experiment-specific keys, checked against the experiment below
    n_list: Option<Vec<usize>>,
    reference_rounds: Option<usize>,
    metric: Option<ConvergenceMetric>,
    nu_list: Option<Vec<f64>>,
    t_min: Option<f64>,
    t_max: Option<f64>,
    points: Option<usize>,
}

struct NsDefaults {
    nu: f64,
    horizon: f64,
    rounds: usize,
}

fn resolve_ns(input: &NsInput, defaults: &mut Defaults, base: NsDefaults) -> ConfigResult<NsSetup> {
    resolve_ns_with(input, defaults, base, false)
}

fn resolve_ns_with(
    input: &NsInput,
    defaults: &mut Defaults,
    base: NsDefaults,
    allow_zero_horizon: bool,
) -> ConfigResult<NsSetup> {
    let grid = resolve_grid(input.grid, defaults, 64, PI)?;
    let mut ns = NsConfig::new(
        grid,
        defaults.take("nu", input.nu, base.nu),
        defaults.take("horizon", input.horizon, base.horizon),
        defaults.take("rounds", input.rounds, base.rounds),
    );
    ns.euler_substeps_per_round = input.euler_substeps;
    if input.euler_substeps.is_none() {
        defaults.0.insert("euler_substeps".into(), Value::String("auto".into()));
    }
    ns.interpolation = defaults.take("interpolation", input.interpolation, Interpolation::Cubic);
    ns.output_times = defaults.take("output_times", input.output_times.clone(), vec![ns.horizon]);
    ns.remesh_every = input.remesh_every;
    if input.remesh_every.is_none() {
        defaults.0.insert("remesh_every".into(), Value::String("never".into()));
    }
    ns.diagnostic_weights = input
        .weights
        .iter()
        .flatten()
        .map(|w| WeightSpec::new(w.m, w.p, w.delta).map_err(|e| invalid(format!("weights: {e}"))))
        .collect::<ConfigResult<_>>()?;
    if allow_zero_horizon && ns.horizon == 0.0 {
        // a zero horizon only reports the projected initial state
        if ns.output_times.iter().any(|&t| t != 0.0) {
            return Err(invalid("with horizon = 0 the only output time is 0"));
        }
        NsConfig { horizon: 1.0, ..ns.clone() }.validate()
    } else {
        ns.validate()
    }
    .map_err(|e| invalid(format!("parameters: {e}")))?;
    let initial = defaults.take("initial", input.initial, InitialData::TaylorGreen { amplitude: 1.0 });
    match initial {
        InitialData::LambOseen { t0, .. } if !(t0 > 0.0 && ns.nu > 0.0) => {
            return Err(invalid("lamb_oseen initial data needs t0 > 0 and nu > 0"));
        }
        InitialData::ShieldedVortex { sigma, .. } if !positive(sigma) => {
            return Err(invalid("shielded_vortex sigma must be positive"));
        }
        InitialData::RandomModes { kmax, .. } if 3 * kmax >= grid.points_per_axis() => {
            return Err(invalid("random_modes kmax must stay below a third of the grid"));
        }
        _ => {}
    }
    if grid.dim() != 2 {
        return Err(invalid("navier-stokes experiments use planar initial data (grid.dim = 2)"));
    }
    Ok(NsSetup { ns, initial })
}

fn reject_keys(input: &NsInput, kind: ExperimentKind) -> ConfigResult<()> {
    let present: [(&str, bool, &[ExperimentKind]); 7] = [
        ("n_list", input.n_list.is_some(), &[ExperimentKind::Converge]),
        ("reference_rounds", input.reference_rounds.is_some(), &[ExperimentKind::Converge]),
        ("metric", input.metric.is_some(), &[ExperimentKind::Converge]),
        ("nu_list", input.nu_list.is_some(), &[ExperimentKind::ViscosityLimit]),
        ("t_min", input.t_min.is_some(), &[ExperimentKind::Commutator]),
        ("t_max", input.t_max.is_some(), &[ExperimentKind::Commutator]),
        ("points", input.points.is_some(), &[ExperimentKind::Commutator]),
    ];
    for (key, given, allowed) in present {
        if given && !allowed.contains(&kind) {
            return Err(invalid(format!("unknown parameter `{key}` for experiment {}", kind.name())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct HeatBound {
    pub grid: Grid,
    pub sigma: f64,
    pub deltas: Vec<f64>,
    pub times: Vec<f64>,
    pub m: usize,
    pub p: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeatBoundInput {
    grid: Option<GridInput>,
    sigma: Option<f64>,
    deltas: Option<Vec<f64>>,
    times: Option<Vec<f64>>,
    m: Option<usize>,
    p: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MatrixTrotter {
    pub size: usize,
    pub t: f64,
    pub n_list: Vec<usize>,
    pub lipschitz_rounds: usize,
    pub lipschitz_times: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixTrotterInput {
    size: Option<usize>,
    t: Option<f64>,
    n_list: Option<Vec<usize>>,
    lipschitz_rounds: Option<usize>,
    lipschitz_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FinslerProbe {
    pub size: usize,
    pub beta: f64,
    pub t_max: f64,
    pub t_points: usize,
    pub samples: usize,
    pub fd_eps: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FinslerProbeInput {
    size: Option<usize>,
    beta: Option<f64>,
    t_max: Option<f64>,
    t_points: Option<usize>,
    samples: Option<usize>,
    fd_eps: Option<f64>,
}

fn parse_table<T: DeserializeOwned>(table: toml::Table, what: &str) -> ConfigResult<T> {
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| invalid(format!("{what}: {}", e.message())))
}

fn check_matrix_size(size: usize) -> ConfigResult<()> {
    if size == 0 || size > viscosplit::expm::MAX_SIZE {
        return Err(invalid(format!("matrix size must be in 1..={}", viscosplit::expm::MAX_SIZE)));
    }
    Ok(())
}

fn resolve_parameters(kind: ExperimentKind, table: toml::Table, d: &mut Defaults) -> ConfigResult<Parameters> {
    use ExperimentKind::*;
    Ok(match kind {
        Simulate | Converge | ViscosityLimit | Commutator => {
            let input: NsInput = parse_table(table, "parameters")?;
            reject_keys(&input, kind)?;
            match kind {
                Simulate => Parameters::Simulate(resolve_ns_with(
                    &input,
                    d,
                    NsDefaults { nu: 0.01, horizon: 0.5, rounds: 64 },
                    true,
                )?),
                Converge => {
                    let ns = resolve_ns(&input, d, NsDefaults { nu: 0.01, horizon: 0.5, rounds: 64 })?;
                    let n_list = d.take("n_list", input.n_list.clone(), vec![4, 8, 16, 32, 64]);
                    let reference_rounds = d.take("reference_rounds", input.reference_rounds, 256);
                    let metric = d.take("metric", input.metric, ConvergenceMetric::LagrangianState);
                    if n_list.len() < 3 {
                        return Err(invalid("n_list needs at least 3 round counts"));
                    }
                    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
                        return Err(invalid("n_list must be positive and strictly increasing"));
                    }
                    if reference_rounds <= *n_list.last().unwrap() {
                        return Err(invalid("reference_rounds must exceed every entry of n_list"));
                    }
                    Parameters::Converge { ns, n_list, reference_rounds, metric }
                }
                ViscosityLimit => {
                    let ns = resolve_ns(&input, d, NsDefaults { nu: 0.1, horizon: 0.25, rounds: 32 })?;
                    let nu_list = d.take("nu_list", input.nu_list.clone(), vec![0.1, 0.05, 0.025, 0.0125]);
                    if nu_list.is_empty() || nu_list.iter().any(|nu| !(0.0..=1.0).contains(nu)) {
                        return Err(invalid("nu_list must be non-empty with entries in [0, 1]"));
                    }
                    if nu_list.windows(2).any(|w| w[1] >= w[0]) {
                        return Err(invalid("nu_list must be strictly descending"));
                    }
                    Parameters::ViscosityLimit { ns, nu_list }
                }
                _ => {
                    let ns = resolve_ns(&input, d, NsDefaults { nu: 0.01, horizon: 0.1, rounds: 1 })?;
                    let t_min = d.take("t_min", input.t_min, 1e-3);
                    let t_max = d.take("t_max", input.t_max, 1e-1);
                    let points = d.take("points", input.points, 8);
                    if !(t_min > 0.0 && t_max > t_min) || points < 2 {
                        return Err(invalid("commutator needs 0 < t_min < t_max and at least 2 points"));
                    }
                    Parameters::Commutator { ns, t_min, t_max, points }
                }
            }
        }
        HeatBound => {
            let input: HeatBoundInput = parse_table(table, "parameters")?;
            let grid = resolve_grid(input.grid, d, 512, 128.0)?;
            let hb = self::HeatBound {
                grid,
                sigma: d.take("sigma", input.sigma, 2.0),
                deltas: d.take("deltas", input.deltas, vec![-1.0, 0.0, 1.0, 2.0]),
                times: d.take("times", input.times, vec![0.0, 1.0, 10.0, 100.0]),
                m: d.take("m", input.m, 0),
                p: d.take("p", input.p, 2.0),
            };
            if !positive(hb.sigma) || hb.deltas.is_empty() || hb.times.first() != Some(&0.0) {
                return Err(invalid("heat-bound needs sigma > 0, some deltas, and times starting at 0"));
            }
            for &delta in &hb.deltas {
                WeightSpec::new(hb.m, hb.p, delta).map_err(|e| invalid(format!("weight: {e}")))?;
            }
            Parameters::HeatBound(hb)
        }
        MatrixTrotter => {
            let input: MatrixTrotterInput = parse_table(table, "parameters")?;
            let mt = self::MatrixTrotter {
                size: d.take("size", input.size, 4),
                t: d.take("t", input.t, 1.0),
                n_list: d.take("n_list", input.n_list, (1..=8).map(|k| 1usize << k).collect()),
                lipschitz_rounds: d.take("lipschitz_rounds", input.lipschitz_rounds, 64),
                lipschitz_times: d.take("lipschitz_times", input.lipschitz_times, vec![0.5, 1.0, 2.0, 4.0]),
            };
            check_matrix_size(mt.size)?;
            if mt.n_list.len() < 2 || mt.n_list.windows(2).any(|w| w[1] <= w[0]) || mt.n_list[0] == 0 {
                return Err(invalid("n_list needs at least 2 positive, strictly increasing entries"));
            }
            if !positive(mt.t)
                || mt.lipschitz_rounds == 0
                || mt.lipschitz_times.iter().any(|t| !(t.is_finite() && *t >= 0.0))
            {
                return Err(invalid("matrix-trotter needs t > 0, lipschitz_rounds >= 1, nonnegative times"));
            }
            Parameters::MatrixTrotter(mt)
        }
        FinslerProbe => {
            let input: FinslerProbeInput = parse_table(table, "parameters")?;
            let fp = self::FinslerProbe {
                size: d.take("size", input.size, 4),
                beta: d.take("beta", input.beta, 1.0),
                t_max: d.take("t_max", input.t_max, 10.0),
                t_points: d.take("t_points", input.t_points, 101),
                samples: d.take("samples", input.samples, 100),
                fd_eps: d.take("fd_eps", input.fd_eps, 1e-5),
            };
            check_matrix_size(fp.size)?;
            if !positive(fp.t_max) || fp.t_points < 2 || fp.samples == 0 || !positive(fp.fd_eps) || !fp.beta.is_finite()
            {
                return Err(invalid("finsler-probe needs t_max > 0, t_points >= 2, samples >= 1, fd_eps > 0"));
            }
            Parameters::FinslerProbe(fp)
        }
    })
}

/// Threshold names and defaults per experiment.
fn default_thresholds(kind: ExperimentKind) -> Vec<(&'static str, Value)> {
    use serde_json::json;
    use ExperimentKind::*;
    match kind {
        Simulate => vec![("max_divergence_residual", json!(1e-3))],
        Converge => vec![
            ("slope_min", json!(-1.2)),
            ("slope_max", json!(-0.9)),
            ("ratio_min", json!(1.6)),
            ("ratio_max", json!(2.5)),
        ],
        ViscosityLimit => vec![("strictly_decreasing", json!(true)), ("final_over_first_max", json!(0.25))],
        HeatBound => vec![("max_ratio_over_initial", json!(3.0))],
        Commutator => vec![("slope_min", json!(1.8)), ("slope_max", json!(2.2))],
        MatrixTrotter => vec![("slope_min", json!(-1.15)), ("slope_max", json!(-0.85)), ("r2_min", json!(0.98))],
        FinslerProbe => vec![("relative_slack", json!(1e-9))],
    }
}

fn resolve_thresholds(
    kind: ExperimentKind,
    table: toml::Table,
    d: &mut Defaults,
) -> ConfigResult<BTreeMap<String, Value>> {
    let known = default_thresholds(kind);
    let mut out = BTreeMap::new();
    for key in table.keys() {
        if !known.iter().any(|(k, _)| k == key) {
            return Err(invalid(format!("unknown threshold `{key}` for experiment {}", kind.name())));
        }
    }
    for (key, default) in known {
        let value = match table.get(key) {
            Some(v) => {
                let json = serde_json::to_value(v).map_err(|e| invalid(e.to_string()))?;
                if json.is_boolean() != default.is_boolean() || json.is_number() != default.is_number() {
                    return Err(invalid(format!("threshold `{key}` has the wrong type")));
                }
                json
            }
            None => {
                d.0.insert(format!("thresholds.{key}"), default.clone());
                default
            }
        };
        out.insert(key.to_string(), value);
    }
    Ok(out)
}

pub fn load(
    path: &Path,
    kind: ExperimentKind,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
) -> ConfigResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, kind, out_override, seed_override)
}

pub fn parse(
    text: &str,
    kind: ExperimentKind,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
) -> ConfigResult<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| invalid(format!("config: {}", e.message())))?;
    let source: Value = {
        let v: toml::Value = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        serde_json::to_value(v).map_err(|e| invalid(e.to_string()))?
    };
    if let Some(named) = raw.experiment {
        if named != kind {
            return Err(invalid(format!("config is for {}, not {}", named.name(), kind.name())));
        }
    }
    let mut defaults = Defaults::default();
    let seed = seed_override.or(raw.seed).unwrap_or_else(|| defaults.take("seed", None, 42));
    let output_dir = match out_override.or(raw.output_dir) {
        Some(dir) => dir,
        None => defaults.take("output_dir", None, PathBuf::from("runs").join(kind.name())),
    };
    let parameters = resolve_parameters(kind, raw.parameters, &mut defaults)?;
    let thresholds = resolve_thresholds(kind, raw.thresholds, &mut defaults)?;
    Ok(ExperimentConfig { experiment: kind, seed, output_dir, parameters, thresholds, defaults, source })
}
