use std::path::PathBuf;
use std::process::ExitCode;

use backtrack_core::environment::ExecutionMode;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod exit;

use config::Overrides;
use exit::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "backtrack",
    version,
    about = "Run, evaluate and mine backtracking GUI agent episodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every task of the dataset and write episodes, timings and rewards.
    Simulate(Common),
    /// Score episodes against the dataset's golden trajectories.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Episode file, or a directory holding episodes.jsonl. Defaults to
        /// the output directory.
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Evaluate a seeded random fraction of the episodes.
        #[arg(long)]
        sample: Option<f64>,
    },
    /// Build judgment and reflection training sets along golden trajectories.
    BuildDatasets(Common),
    /// Print a saved report as text.
    Report {
        /// report.json, or a directory holding one.
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration, or a manifest written by an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    execution_mode: Option<ExecutionMode>,
    #[arg(long)]
    max_reflections: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<ExecutionMode, String> {
    s.parse()
}

impl Common {
    fn load(&self) -> Result<config::Loaded, Failure> {
        let overrides = Overrides {
            seed: self.seed,
            parallelism: self.parallelism,
            execution_mode: self.execution_mode,
            max_reflections: self.max_reflections,
            out: self.out.clone(),
        };
        config::load(&self.config, &overrides)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(common) => commands::simulate(&common.load()?.config),
        Command::Evaluate {
            common,
            episodes,
            sample,
        } => {
            let loaded = common.load()?;
            let cfg = &loaded.config;
            let episodes = match episodes {
                Some(p) => p,
                None => match loaded.args.get("episodes").and_then(|v| v.as_str()) {
                    Some(p) => PathBuf::from(p),
                    None => cfg.out_dir()?.to_path_buf(),
                },
            };
            let sample = sample.or_else(|| loaded.args.get("sample").and_then(|v| v.as_f64()));
            commands::evaluate(cfg, &episodes, sample).map(|_| ())
        }
        Command::BuildDatasets(common) => commands::build_datasets(&common.load()?.config),
        Command::Report { input } => commands::report(&input),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}
