//! `leakywire`: bound states of leaky quantum wires from the command line.
//!
//! Exit status is 0 on success, 2 when the input is rejected (bad JSON,
//! inadmissible curve, bad parameters) and 3 when a numerical step fails to
//! converge. `LEAKYWIRE_THREADS` caps the number of worker threads.

use std::fs::File;
use std::io::{BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use leakywire::asymptotics::{self, AKernelParams};
use leakywire::geometry::ScaledCurve;
use leakywire::harness::{self, Experiment, ExperimentConfig, HarnessError};
use leakywire::operator::{self, Grid, Scheme};
use leakywire::quadrature::QuadSettings;
use leakywire::spectrum::{self, Ground, SolveSettings};

const THREADS_VAR: &str = "LEAKYWIRE_THREADS";

#[derive(Parser)]
#[command(name = "leakywire", version, about = "Discrete spectrum of leaky quantum wires")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a curve file describes an admissible curve.
    Validate {
        curve: PathBuf,
        /// Bending scale at which to check.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },
    /// Solve for the lowest eigenvalues of one curve.
    Solve {
        curve: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Number of grid cells; with `--L`, fixes the grid.
        #[arg(long)]
        n: Option<usize>,
        /// Half-length of the truncated curve.
        #[arg(long = "L")]
        half_length: Option<f64>,
        /// Width of the final bracket in κ.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long, value_enum, default_value_t = SchemeArg::CellIntegrated)]
        scheme: SchemeArg,
        /// Write the kernel matrix at the ground-state κ as CSV.
        #[arg(long)]
        matrix_csv: Option<PathBuf>,
    },
    /// Weak-bending coefficient ∫∫𝒜 of a curve.
    Coef {
        curve: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-9)]
        rel_tol: f64,
    },
    /// Ground state against β, with a power-law fit.
    SweepBeta { config: PathBuf },
    /// Levels against the wiggle angle φ, with first-order predictions.
    SweepPhi { config: PathBuf },
    /// Grid convergence study at a single β or φ.
    Converge { config: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SchemeArg {
    CellIntegrated,
    Midpoint,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::CellIntegrated => Scheme::CellIntegrated,
            SchemeArg::Midpoint => Scheme::Midpoint,
        }
    }
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

fn numerical(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 3, error: e.into() }
}

fn rejected(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: e.into() }
}

fn io(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: e.into() }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(io)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(io),
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got {value:?}"))
        .map_err(rejected)?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(io)
}

fn validate(curve: &Path, beta: f64) -> Result<(), Failure> {
    let spec = harness::read_curve(curve)?;
    let report = match harness::check_admissible(&spec, beta) {
        Ok(r) => r,
        Err(HarnessError::Inadmissible(r)) => {
            print_json(&r)?;
            return Err(rejected(anyhow::anyhow!("curve is not admissible: {}", r.issues.join("; "))));
        }
        Err(e) => return Err(e.into()),
    };
    print_json(&report)
}

#[allow(clippy::too_many_arguments)]
fn solve(
    curve: &Path,
    alpha: f64,
    beta: f64,
    n: Option<usize>,
    half_length: Option<f64>,
    tol: f64,
    levels: usize,
    scheme: Scheme,
    matrix_csv: Option<&Path>,
) -> Result<(), Failure> {
    let spec = harness::read_curve(curve)?;
    let mut config = ExperimentConfig::new(spec.clone(), alpha);
    config.tolerances.solve = tol;
    config.scheme = scheme;
    config.check()?;
    if levels == 0 {
        return Err(rejected(anyhow::anyhow!("--levels must be at least 1")));
    }
    harness::check_admissible(&spec, beta)?;
    let scaled = ScaledCurve::new(spec.clone(), beta).map_err(rejected)?;

    let grid = match (n, half_length) {
        (Some(n), Some(l)) => Grid::uniform(l, n).map_err(rejected)?,
        (None, None) => {
            let params = AKernelParams::new(spec, alpha).map_err(rejected)?;
            let coef = asymptotics::a_coefficient(&params, &QuadSettings::default()).map_err(numerical)?;
            harness::grid_for(&config, Some(coef.predicted_gap(beta).sqrt()))?
        }
        _ => return Err(rejected(anyhow::anyhow!("--n and --L must be given together"))),
    };
    let settings = SolveSettings {
        scheme,
        tol,
        ..SolveSettings::default()
    };
    let ground = spectrum::solve_ground(&scaled, alpha, &grid, &settings).map_err(numerical)?;
    let first = match ground {
        Ground::Bound(r) => r,
        Ground::NoBoundState { kappa_lo, eta_alpha } => {
            return print_json(&serde_json::json!({
                "status": "no-bound-state",
                "kappa_lo": kappa_lo,
                "eta_alpha": eta_alpha,
                "grid": grid.size(),
                "curve_hash": scaled.hash(),
            }));
        }
    };
    if let Some(path) = matrix_csv {
        let m = operator::assemble(&scaled, first.kappa, &grid, scheme).map_err(numerical)?;
        let file = File::create(path).with_context(|| path.display().to_string()).map_err(io)?;
        m.write_csv(BufWriter::new(file)).map_err(io)?;
    }
    if levels == 1 {
        return print_json(&first);
    }
    let all = spectrum::solve_all(&scaled, alpha, &grid, &settings, levels).map_err(numerical)?;
    print_json(&all)
}

fn coef(curve: &Path, alpha: f64, rel_tol: f64) -> Result<(), Failure> {
    let spec = harness::read_curve(curve)?;
    harness::check_admissible(&spec, 1.0)?;
    let params = AKernelParams::new(spec, alpha).map_err(rejected)?;
    if !(rel_tol > 0.0) {
        return Err(rejected(anyhow::anyhow!("--rel-tol must be positive")));
    }
    let settings = QuadSettings {
        rel_tol,
        ..QuadSettings::default()
    };
    let c = asymptotics::a_coefficient(&params, &settings).map_err(numerical)?;
    print_json(&c)
}

fn run(command: Command) -> Result<(), Failure> {
    configure_threads()?;
    match command {
        Command::Validate { curve, beta } => validate(&curve, beta),
        Command::Solve {
            curve,
            alpha,
            beta,
            n,
            half_length,
            tol,
            levels,
            scheme,
            matrix_csv,
        } => solve(&curve, alpha, beta, n, half_length, tol, levels, scheme.into(), matrix_csv.as_deref()),
        Command::Coef { curve, alpha, rel_tol } => coef(&curve, alpha, rel_tol),
        Command::SweepBeta { config } => {
            let exp = Experiment::load(&config)?;
            let report = harness::sweep_beta(&exp)?;
            report.write(&exp.config.outputs)?;
            print_json(&report)
        }
        Command::SweepPhi { config } => {
            let exp = Experiment::load(&config)?;
            let report = harness::sweep_phi(&exp)?;
            report.write(&exp.config.outputs)?;
            print_json(&report)
        }
        Command::Converge { config } => {
            let exp = Experiment::load(&config)?;
            let report = harness::convergence(&exp)?;
            report.write(&exp.config.outputs)?;
            print_json(&report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
