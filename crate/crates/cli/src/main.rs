use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mei_cli::config::ExperimentConfig;
use mei_cli::runner::{self, Artifacts, Section};
use mei_cli::{resolve_seed, CliError, SEED_ENV};

#[derive(Parser)]
#[command(name = "mei", version, about = "Multivariate extremal index experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master RNG seed; overrides MEI_SEED and the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory; the JSON report goes to stdout when unset.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the model and write series.csv.
    Simulate,
    /// Extremal index estimates over the tau grid.
    Estimate,
    /// Closed-form, printed and estimated bounds.
    Bounds,
    /// Point-process decomposition identities.
    Decomp,
    /// Tail dependence curves and point estimates.
    Tail,
    /// Every section of one experiment.
    Run,
    /// Every section for the three built-in M4 presets.
    ReproducePaper,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Bounds => "bounds",
            Command::Decomp => "decomp",
            Command::Tail => "tail",
            Command::Run => "run",
            Command::ReproducePaper => "reproduce-paper",
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, env.as_deref(), cfg.as_ref().and_then(|c| c.seed))?;
    let need = || cfg.as_ref().ok_or_else(|| CliError::Config(format!("{} needs --config", cli.command.name())));

    let work = || -> Result<Artifacts, CliError> {
        match cli.command {
            Command::ReproducePaper => runner::reproduce_paper(cfg.as_ref(), seed),
            Command::Simulate => runner::simulate(need()?, seed),
            Command::Run => runner::run_experiment(need()?, seed),
            Command::Estimate => runner::run_config(need()?, seed, "estimate", &[Section::Mei, Section::Theory]),
            Command::Bounds => runner::run_config(need()?, seed, "bounds", &[Section::Theory, Section::Bounds]),
            Command::Decomp => runner::run_config(need()?, seed, "decomp", &[Section::Decomp]),
            Command::Tail => runner::run_config(need()?, seed, "tail", &[Section::Tail]),
        }
    };
    let artifacts = match cli.threads {
        Some(0) => return Err(CliError::Config("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let out = cli.out.clone().or_else(|| cfg.as_ref().and_then(|c| c.output.dir.clone()));
    match out {
        Some(dir) => {
            for p in artifacts.write(&dir)? {
                log::info!("wrote {}", p.display());
            }
        }
        None => {
            let bytes = match cli.command {
                Command::Simulate => artifacts.tables[0].1.clone(),
                _ => artifacts.report_bytes()?,
            };
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| CliError::Io { path: "<stdout>".into(), source: e })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mei: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
