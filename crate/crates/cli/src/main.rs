use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use homog_core::cli_runner::{parse_config, run, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    /// Dump the cell-problem table.
    Cell,
    /// Dump the effective coefficients.
    Effective,
    /// One fine and one effective solve at the first eps.
    Solve,
    /// Convergence study over the eps schedule.
    Study,
    /// Decay table of the second-corrector form.
    Counterexample,
    /// Resolvent identity residuals.
    Identity,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::Cell => Command::Cell,
            Sub::Effective => Command::Effective,
            Sub::Solve => Command::Solve,
            Sub::Study => Command::Study,
            Sub::Counterexample => Command::Counterexample,
            Sub::Identity => Command::Identity,
        }
    }
}

/// Locally periodic homogenization studies.
#[derive(Debug, Parser)]
#[command(name = "homog", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// key = value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output` key.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, env = "HOMOG_THREADS", default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(args: &Args) -> Result<Vec<PathBuf>> {
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global().context("setting up the thread pool")?;
    }
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let cfg = parse_config(&text).with_context(|| format!("in {}", args.config.display()))?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output));
    let cmd = Command::from(args.command);
    run(cmd, &cfg, &out).with_context(|| format!("subcommand {}", cmd.name()))
}
