//! `gsnell`: run the lattice solvers from a JSON configuration.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsnell::lattice::Topology;
use gsnell::Execution;

use commands::Command;
use config::RunConfig;
use report::{RunReport, Timing};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
}

impl From<gsnell::Error> for CliError {
    fn from(e: gsnell::Error) -> Self {
        if e.is_configuration() {
            CliError::Config(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gsnell", version, about = "Lattice g-expectations, reflected BSDEs and optimal stopping")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TopologyArg {
    BinaryPath,
    RecombLattice,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExecutionArg {
    Sequential,
    Parallel,
}

/// Flags shared by every subcommand. Each one overrides the config field
/// of the same name.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the result JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock time in the result.
    #[arg(long)]
    timing: bool,
    /// Horizon `T`.
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of steps `N`.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    topology: Option<TopologyArg>,
    #[arg(long, value_enum)]
    execution: Option<ExecutionArg>,
    /// Entropic risk aversion for `risk` and `converge`.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Solve the BSDE with driver `f0` and terminal `B`.
    Gexp(Common),
    /// American price of `claim` under the g-expectation.
    Price(Common),
    /// Reflected solution below `barrier` and its Snell envelope.
    Reflect(Common),
    /// Doob-Meyer decomposition of the envelope by penalization.
    Penalize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        penalty_tolerance: Option<f64>,
    },
    /// Compare the envelope with brute-force enumeration of stopping rules.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Tree depth (at most 5); overrides `N`.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        t_step: Option<usize>,
    },
    /// Worst-stopping entropic risk of `claim`.
    Risk(Common),
    /// The agent's stopping and effort problem.
    ScenarioPa(Common),
    /// Convergence table against the exact entropic value.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Number of grid sizes `n0, 2 n0, ...`.
        #[arg(long)]
        doubling: Option<usize>,
        #[arg(long)]
        n0: Option<usize>,
        /// Where to write the CSV table (stdout when omitted and `--out` is given).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

struct Invocation {
    command: Command,
    common: Common,
    csv: Option<PathBuf>,
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(t) = c.horizon {
        cfg.model.horizon = t;
    }
    if let Some(n) = c.steps {
        cfg.model.steps = n;
    }
    if let Some(t) = c.topology {
        cfg.model.topology = match t {
            TopologyArg::BinaryPath => Topology::BinaryPath,
            TopologyArg::RecombLattice => Topology::RecombLattice,
        };
    }
    if let Some(e) = c.execution {
        cfg.execution = match e {
            ExecutionArg::Sequential => Execution::Sequential,
            ExecutionArg::Parallel => Execution::Parallel,
        };
    }
    if c.alpha.is_some() {
        cfg.alpha = c.alpha;
    }
}

fn resolve(cmd: Cmd) -> Result<(Invocation, RunConfig), CliError> {
    let (command, common, csv) = match cmd {
        Cmd::Gexp(c) => (Command::Gexp, c, None),
        Cmd::Price(c) => (Command::Price, c, None),
        Cmd::Reflect(c) => (Command::Reflect, c, None),
        Cmd::Risk(c) => (Command::Risk, c, None),
        Cmd::ScenarioPa(c) => (Command::ScenarioPa, c, None),
        Cmd::Penalize { common, penalty_tolerance } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if penalty_tolerance.is_some() {
                cfg.penalty_tolerance = penalty_tolerance;
            }
            return finish(Command::Penalize, common, None, cfg);
        }
        Cmd::Oracle { common, depth, t_step } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if depth.is_some() {
                cfg.depth = depth;
            }
            if t_step.is_some() {
                cfg.t_step = t_step;
            }
            return finish(Command::Oracle, common, None, cfg);
        }
        Cmd::Converge { common, doubling, n0, csv } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if doubling.is_some() {
                cfg.doubling = doubling;
            }
            if n0.is_some() {
                cfg.n0 = n0;
            }
            return finish(Command::Converge, common, csv, cfg);
        }
    };
    let cfg = RunConfig::load(common.config.as_deref())?;
    finish(command, common, csv, cfg)
}

fn finish(
    command: Command,
    common: Common,
    csv: Option<PathBuf>,
    mut cfg: RunConfig,
) -> Result<(Invocation, RunConfig), CliError> {
    apply_common(&mut cfg, &common);
    commands::prepare(command, &mut cfg)?;
    cfg.validate()?;
    Ok((Invocation { command, common, csv }, cfg))
}

fn execute(cmd: Cmd) -> Result<(), CliError> {
    let (inv, cfg) = resolve(cmd)?;
    let start = Instant::now();
    let outcome = commands::run(inv.command, &cfg)?;
    let timing = inv.common.timing.then(|| Timing {
        seconds: start.elapsed().as_secs_f64(),
    });
    let doc = RunReport {
        config_echo: cfg,
        values: outcome.values,
        diagnostics: outcome.diagnostics,
        timing,
    }
    .to_json();
    match &inv.common.out {
        Some(path) => report::write(path, &doc)?,
        None => print!("{doc}"),
    }
    if let Some(table) = outcome.csv {
        match (&inv.csv, &inv.common.out) {
            (Some(path), _) => report::write(path, &table)?,
            (None, Some(_)) => print!("{table}"),
            (None, None) => {}
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsnell: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
