mod config;
mod ops;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{CliError, ConfigFile};
use ops::Experiment;

#[derive(Debug, Parser)]
#[command(name = "centerlab", version, about = "Numerical experiments on partially hyperbolic maps of T^3 and Kan-type skew products")]
struct Cli {
    /// JSON config with `model`, `experiment` and `execution` blocks.
    #[arg(long, global = true, alias = "model")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Model checks.
    Model {
        #[command(subcommand)]
        cmd: ModelCmd,
    },
    /// Lyapunov spectra from random starting points.
    Spectrum(ops::SpectrumArgs),
    /// Semiconjugacy to the linear part.
    Semiconj {
        #[command(subcommand)]
        cmd: SemiconjCmd,
    },
    /// Leaves of the invariant foliations.
    Leaf {
        #[command(subcommand)]
        cmd: LeafCmd,
    },
    /// Length growth of iterated leaf segments.
    Growth(ops::GrowthArgs),
    /// Conditional measures of a sampled measure in a foliation box.
    Disint(ops::DisintArgs),
    /// Partial entropy along a foliation.
    Entropy(ops::EntropyArgs),
    /// Partial entropy inequality against the strong unstable exponent.
    IneqCheck(ops::IneqArgs),
    /// Pliss times of a series.
    Pliss(ops::PlissArgs),
    /// Kan-type skew product on the cylinder.
    Kan {
        #[command(subcommand)]
        cmd: KanCmd,
    },
    /// Runs the experiment block of a config file.
    Run {
        /// Config file; same format as `--config`.
        path: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum ModelCmd {
    Validate(ops::ValidateArgs),
}

#[derive(Debug, Subcommand)]
enum SemiconjCmd {
    Residual(ops::ResidualArgs),
    Fiber(ops::FiberArgs),
}

#[derive(Debug, Subcommand)]
enum LeafCmd {
    Trace(ops::TraceArgs),
}

#[derive(Debug, Subcommand)]
enum KanCmd {
    Validate(ops::KanArgs),
    Basins(ops::BasinArgs),
    Measure(ops::MeasureArgs),
    Holonomy(ops::HolonomyArgs),
    Singularity(ops::SingularityArgs),
}

impl Command {
    fn into_experiment(self) -> Option<Experiment> {
        Some(match self {
            Command::Model { cmd: ModelCmd::Validate(a) } => Experiment::ModelValidate(a),
            Command::Spectrum(a) => Experiment::Spectrum(a),
            Command::Semiconj { cmd: SemiconjCmd::Residual(a) } => Experiment::SemiconjResidual(a),
            Command::Semiconj { cmd: SemiconjCmd::Fiber(a) } => Experiment::SemiconjFiber(a),
            Command::Leaf { cmd: LeafCmd::Trace(a) } => Experiment::LeafTrace(a),
            Command::Growth(a) => Experiment::Growth(a),
            Command::Disint(a) => Experiment::Disint(a),
            Command::Entropy(a) => Experiment::Entropy(a),
            Command::IneqCheck(a) => Experiment::IneqCheck(a),
            Command::Pliss(a) => Experiment::Pliss(a),
            Command::Kan { cmd } => match cmd {
                KanCmd::Validate(a) => Experiment::KanValidate(a),
                KanCmd::Basins(a) => Experiment::KanBasins(a),
                KanCmd::Measure(a) => Experiment::KanMeasure(a),
                KanCmd::Holonomy(a) => Experiment::KanHolonomy(a),
                KanCmd::Singularity(a) => Experiment::KanSingularity(a),
            },
            Command::Run { .. } => return None,
        })
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (file, experiment) = match cli.command {
        Command::Run { path } => {
            let file = ConfigFile::load(&path)?;
            let exp = file
                .experiment
                .clone()
                .ok_or_else(|| CliError::Config(format!("{} has no experiment block", path.display())))?;
            (file, exp)
        }
        cmd => {
            let file = match &cli.config {
                Some(p) => ConfigFile::load(p)?,
                None => ConfigFile::default(),
            };
            (file, cmd.into_experiment().expect("non-run command"))
        }
    };
    let mut experiment = experiment;
    let seed = cli.seed.or(file.execution.seed).unwrap_or(0);
    let out = cli.out.or(file.execution.out).unwrap_or_else(|| PathBuf::from("out"));
    if let Some(w) = cli.workers.or(file.execution.workers) {
        if w == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let model = experiment.resolve(file.model);
    let start = Instant::now();
    let output = ops::run(&experiment, &model, seed)?;
    let wall = start.elapsed().as_secs_f64();
    let paths = report::write(&out, &experiment, &model, seed, output)?;
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    eprintln!("{}: {wall:.3} s", experiment.name());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
