use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rumax_cli::generate::Shape;
use rumax_cli::problem::AmbiguityType;
use rumax_cli::report::{run_report, Command, RunConfig, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "rumax", version, about = "Robust expected utility maximization on scenario lattices")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Output directory for JSON and CSV artifacts.
    #[arg(long, default_value = "rumax-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides both primal and dual tolerances.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    quiet: bool,
    #[arg(long, hide = true)]
    fault_inject: bool,
}

#[derive(Args, Clone)]
struct Files {
    /// Problem files; several run as a batch.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    FiniteHull,
    MomentSet,
    WassersteinBall,
    WassersteinPenalty,
}

#[derive(Subcommand)]
enum Cmd {
    /// Primal value, strategy and certificate.
    Solve(Files),
    /// Dual certificate.
    Dual(Files),
    /// Duality gap report.
    Gap(Files),
    /// Robust entropic value for exponential utility.
    Entropic(Files),
    /// No-arbitrage check of the ambiguity set.
    NaCheck(Files),
    /// Transport distance between two measures.
    Wasserstein(Files),
    /// Tabulated convex conjugate per leaf.
    Conjugate(Files),
    /// Monotonicity, convexity and Fenchel checks.
    Biconj(Files),
    /// Seeded random instances.
    Gen {
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        branching: usize,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn config(command: Command, inputs: Vec<PathBuf>, c: Common) -> Result<RunConfig> {
    if let Some(t) = c.tol {
        if !(t.is_finite() && t > 0.0) {
            bail!("--tol must be a positive number, got {t}");
        }
    }
    let mut cfg = RunConfig::new(command, inputs, c.out);
    cfg.seed = c.seed;
    cfg.tol = c.tol;
    cfg.max_iters = c.max_iters;
    cfg.quiet = c.quiet;
    cfg.fault_inject = c.fault_inject;
    Ok(cfg)
}

fn build(cli: Cli) -> Result<RunConfig> {
    let (command, files) = match cli.command {
        Cmd::Solve(f) => (Command::Solve, f),
        Cmd::Dual(f) => (Command::Dual, f),
        Cmd::Gap(f) => (Command::Gap, f),
        Cmd::Entropic(f) => (Command::Entropic, f),
        Cmd::NaCheck(f) => (Command::NaCheck, f),
        Cmd::Wasserstein(f) => (Command::Wasserstein, f),
        Cmd::Conjugate(f) => (Command::Conjugate, f),
        Cmd::Biconj(f) => (Command::Biconj, f),
        Cmd::Gen { horizon, branching, kind, count, common } => {
            let kind = match kind {
                Kind::FiniteHull => AmbiguityType::FiniteHull,
                Kind::MomentSet => AmbiguityType::MomentSet,
                Kind::WassersteinBall => AmbiguityType::WassersteinBall,
                Kind::WassersteinPenalty => AmbiguityType::WassersteinPenalty,
            };
            let mut cfg = config(Command::Gen, Vec::new(), common)?;
            cfg.shape = Some(Shape { horizon, branching, kind });
            cfg.count = count;
            return Ok(cfg);
        }
    };
    config(command, files.inputs, files.common)
}

fn main() -> ExitCode {
    let cfg = match build(Cli::parse()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("rumax: {e:#}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let outcome = run_report(&cfg);
    for line in &outcome.lines {
        if line.contains("error:") {
            eprintln!("rumax: {line}");
        } else if !cfg.quiet {
            println!("{line}");
        }
    }
    ExitCode::from(outcome.code as u8)
}
