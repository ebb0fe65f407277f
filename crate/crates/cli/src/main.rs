use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use viscosplit::Error;

mod artifacts;
mod config;
mod experiments;

use config::ExperimentKind;

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "viscosplit", version, about = "Operator-splitting experiments for viscous flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Navier-Stokes run with snapshots and diagnostics.
    Simulate(RunArgs),
    /// Splitting error versus number of rounds.
    Converge(RunArgs),
    /// Distance to the inviscid run as the viscosity decreases.
    ViscosityLimit(RunArgs),
    /// Weighted-norm growth of the heat semigroup.
    HeatBound(RunArgs),
    /// Commutator defect of the Euler and heat flows.
    Commutator(RunArgs),
    /// Product formula on random matrices.
    MatrixTrotter(RunArgs),
    /// Finite-difference probe of the Finsler norm of a linear flow.
    FinslerProbe(RunArgs),
    /// Rewrites plot_data.csv for an existing run directory.
    PlotData { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("VISCOSPLIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("VISCOSPLIT_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())
}

/// Errors that stem from the inputs rather than from the integration.
fn is_input_error(err: &Error) -> bool {
    matches!(
        err,
        Error::InvalidGrid(_)
            | Error::InvalidField(_)
            | Error::InvalidWeight(_)
            | Error::InvalidParameter(_)
            | Error::NotBandLimited(_)
            | Error::NonZeroMean(_)
            | Error::Io(_)
            | Error::Json(_)
    )
}

fn run(kind: ExperimentKind, args: RunArgs) -> u8 {
    let cfg = match config::load(&args.config, kind, args.out, args.seed) {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("{e}");
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let dir = cfg.output_dir.clone();
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("cannot create {}: {e}", dir.display());
        return EXIT_CONFIG;
    }
    info!("running {} with seed {} into {}", kind.name(), cfg.seed, dir.display());
    match experiments::run(&cfg, &dir) {
        Ok(report) => match artifacts::write_report(&dir, &cfg, &report) {
            Ok(artifacts::Status::Pass) => {
                println!("{}: pass ({})", kind.name(), dir.display());
                0
            }
            Ok(_) => {
                for c in report.checks.iter().filter(|c| !c.pass) {
                    println!("{}: check {} failed with {}", kind.name(), c.name, c.value);
                }
                EXIT_FAIL
            }
            Err(e) => {
                eprintln!("cannot write artifacts: {e:#}");
                EXIT_CONFIG
            }
        },
        Err(e) if is_input_error(&e) => {
            eprintln!("invalid input: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("numerical abort: {e}");
            if let Err(w) = artifacts::write_abort(&dir, &cfg, &e) {
                eprintln!("cannot write artifacts: {w:#}");
            }
            EXIT_NUMERICAL
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("{e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let code = match cli.command {
        Command::Simulate(a) => run(ExperimentKind::Simulate, a),
        Command::Converge(a) => run(ExperimentKind::Converge, a),
        Command::ViscosityLimit(a) => run(ExperimentKind::ViscosityLimit, a),
        Command::HeatBound(a) => run(ExperimentKind::HeatBound, a),
        Command::Commutator(a) => run(ExperimentKind::Commutator, a),
        Command::MatrixTrotter(a) => run(ExperimentKind::MatrixTrotter, a),
        Command::FinslerProbe(a) => run(ExperimentKind::FinslerProbe, a),
        Command::PlotData { dir } => match artifacts::emit_plot_data(&dir) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("{e:#}");
                EXIT_CONFIG
            }
        },
    };
    ExitCode::from(code)
}
