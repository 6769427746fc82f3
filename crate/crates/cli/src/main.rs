use std::path::PathBuf;
use std::process::ExitCode;

use alloy_repair::orchestrator::FinalStatus;
use alloy_repair_cli::{
    cmd_bench, cmd_preprocess, cmd_repair, cmd_report, BackendMode, CliError, Overrides, RunConfig,
};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// LLM-driven repair of faulty Alloy specifications.
#[derive(Parser)]
#[command(name = "alloy-repair", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Strip fix annotations and write a clean copy of a suite with its manifest.
    Preprocess {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repair one specification file under one setting.
    Repair {
        file: PathBuf,
        #[arg(long)]
        setting: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run every configured setting over a suite, then write reports.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Re-run sessions that already have a trace.
        #[arg(long)]
        force: bool,
    },
    /// Rebuild reports from the traces in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Restrict to these setting ids (repeatable).
    #[arg(long = "only")]
    only: Vec<String>,
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    /// `live` or `scripted:<path>`.
    #[arg(long)]
    backend: Option<BackendMode>,
    /// Analyzer runner command, e.g. `java -jar alloy-runner.jar`.
    #[arg(long)]
    runner: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(self) -> Result<RunConfig, CliError> {
        let overrides = Overrides {
            suite: self.suite,
            settings: self.only,
            budget: self.budget,
            temperature: self.temperature,
            backend: self.backend,
            runner: self.runner,
            workers: self.workers,
            out: self.out,
        };
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Preprocess { suite, out } => {
            let manifest = cmd_preprocess(&suite, &out)?;
            println!("{}", manifest.describe());
            Ok(ExitCode::SUCCESS)
        }
        Command::Repair { file, setting, run } => {
            let config = run.load()?;
            let session = cmd_repair(&config, &file, &setting)?;
            match session.final_status {
                FinalStatus::Fixed { at_iteration } => println!("Fixed at iteration {at_iteration}"),
                FinalStatus::Unfixed => println!("Unfixed after {} iterations", session.iterations.len()),
            }
            println!("Cost: ${}", session.total_cost_usd);
            if let Some(err) = &session.error {
                eprintln!("error: {err}");
                return Ok(ExitCode::from(2));
            }
            Ok(if session.is_fixed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Bench { run, force } => {
            let config = run.load()?;
            let outcome = cmd_bench(&config, force)?;
            println!("{} sessions run, {} already traced", outcome.ran, outcome.skipped);
            for path in &outcome.reports {
                println!("wrote {}", path.display());
            }
            if outcome.infra_failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "{} sessions hit infrastructure errors: {}",
                    outcome.infra_failures.len(),
                    outcome.infra_failures.join(", ")
                );
                Ok(ExitCode::from(2))
            }
        }
        Command::Report { out } => {
            for path in cmd_report(&out)? {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
