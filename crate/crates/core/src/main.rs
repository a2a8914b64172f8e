use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use effrob::cli::{self, CliError, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "effrob", version, about = "Effective robustness baselines over one or more ID test sets")]
struct Args {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "effrob.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    clamp_eps: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit baselines for every OOD test set and ID setting.
    Fit,
    /// Compute effective robustness reports.
    Eval,
    /// Export scatter, plane and projected-line data from stored fits.
    Plotdata,
    /// Build a labeled test set from a caption corpus.
    Label,
    /// Generate a synthetic accuracy table.
    Simulate,
}

fn run(args: &Args) -> Result<String, CliError> {
    let overrides = Overrides {
        output_dir: args.output_dir.as_ref().map(|d| std::env::current_dir().unwrap_or_default().join(d)),
        clamp_eps: args.clamp_eps,
        workers: args.workers,
        seed: args.seed,
    };
    let cfg = RunConfig::load(&args.config, &overrides)?;
    match args.command {
        Command::Fit => cli::cmd_fit(&cfg),
        Command::Eval => cli::cmd_eval(&cfg),
        Command::Plotdata => cli::cmd_plotdata(&cfg),
        Command::Label => cli::cmd_label(&cfg),
        Command::Simulate => cli::cmd_simulate(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
