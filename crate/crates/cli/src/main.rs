use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smelab::repro::{run_experiment, run_figures, selftest, Check, ExperimentConfig, ExperimentKind, Outcome};
use smelab::Error;

#[derive(Parser)]
#[command(name = "smelab", version, about = "SGA vs SME experiments on quadratic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weak-error order fits against eta.
    WeakError(Common),
    /// Descent rate against condition number.
    Sweep(Common),
    /// Variance-induced divergence on model 2.
    Divergence(Common),
    /// MSGD against the Langevin SME and the optimal momentum.
    Momentum(Common),
    /// MSGD vs SNAG, including the Nesterov schedule.
    CompareSnag(Common),
    /// Every experiment with its default configuration.
    Figures(Common),
    /// Oracle and invariant suites.
    Selftest(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "SMELAB_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Io { .. } | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default_for(kind),
    };
    if cfg.experiment != kind {
        return Err(Failure::Usage(format!(
            "config error at `experiment`: expected {}, found {}",
            kind.name(),
            cfg.experiment.name()
        )));
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("smelab-out"))
}

fn check_threads(common: &Common) -> Result<(), Failure> {
    match common.threads {
        Some(0) => Err(Failure::Usage("config error at `threads`: must be >= 1".into())),
        _ => Ok(()),
    }
}

fn run(command: Command) -> Result<Outcome, Failure> {
    let single = |kind: ExperimentKind, common: Common| -> Result<Outcome, Failure> {
        check_threads(&common)?;
        let cfg = load(kind, &common)?;
        let dir = out_dir(&common, Some(&cfg));
        Ok(run_experiment(&cfg, &dir)?)
    };
    match command {
        Command::WeakError(c) => single(ExperimentKind::WeakError, c),
        Command::Sweep(c) => single(ExperimentKind::ConditionSweep, c),
        Command::Divergence(c) => single(ExperimentKind::Divergence, c),
        Command::Momentum(c) => single(ExperimentKind::MomentumDynamics, c),
        Command::CompareSnag(c) => single(ExperimentKind::MsgdVsSnag, c),
        Command::Figures(c) => {
            check_threads(&c)?;
            Ok(run_figures(c.seed.unwrap_or(0), c.threads, &out_dir(&c, None))?)
        }
        Command::Selftest(c) => {
            check_threads(&c)?;
            Ok(Outcome {
                checks: selftest(c.seed.unwrap_or(0), c.threads)?,
                files: Vec::new(),
            })
        }
    }
}

fn report(checks: &[Check], files: &[PathBuf]) {
    for c in checks {
        println!("{}", c.line());
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {} failed", checks.len(), failed);
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(outcome) => {
            report(&outcome.checks, &outcome.files);
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
