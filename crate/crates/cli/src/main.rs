//! `ctmc-learn` command line.
//!
//! Exit status: 0 on success, 2 for a bad config, 1 for anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctmc_learn::harness::experiment::{
    evaluate_stage, fit_stage, run_experiment, simulate_stage, sweep,
};
use ctmc_learn::harness::fmt::sig6;
use ctmc_learn::harness::{apply_seed, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(
    name = "ctmc-learn",
    version,
    about = "Learn CTMC rates from partial steady-state counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Overrides both the simulator and optimizer seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for run output.
    #[arg(
        long,
        global = true,
        env = "CTMC_LEARN_OUT_DIR",
        default_value = "runs"
    )]
    out_dir: PathBuf,
    /// Only errors on stderr, nothing on stdout.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test datasets for every replicate.
    Simulate { config: PathBuf },
    /// Fit every replicate from its saved training data.
    Fit { config: PathBuf },
    /// Score saved fits on the test windows and write summary.json.
    Evaluate { config: PathBuf },
    /// simulate, fit and evaluate in one go.
    Run { config: PathBuf },
    /// One full run per value of the config's sweep section.
    Sweep { config: PathBuf },
}

impl Command {
    fn config(&self) -> &Path {
        match self {
            Command::Simulate { config }
            | Command::Fit { config }
            | Command::Evaluate { config }
            | Command::Run { config }
            | Command::Sweep { config } => config,
        }
    }
}

fn execute(cli: &Cli) -> Result<String, HarnessError> {
    let (cfg, mut raw) = ExperimentConfig::load(cli.command.config())?;
    let cfg = apply_seed(cfg, &mut raw, cli.global.seed)?;
    let out = &cli.global.out_dir;
    Ok(match &cli.command {
        Command::Simulate { .. } => {
            let dir = simulate_stage(&cfg, &raw, out)?;
            format!(
                "wrote {} replicate(s) to {}\n",
                cfg.evaluate.replicates,
                dir.display()
            )
        }
        Command::Fit { .. } => {
            let mut text = String::new();
            for (r, o) in fit_stage(&cfg, &raw, out)?.iter().enumerate() {
                let last = o.fit.final_record();
                text += &format!(
                    "{} rep {r}: eta0={} train_nll={} engine_loss={}\n",
                    cfg.name,
                    sig6(o.eta0),
                    sig6(last.train_nll),
                    sig6(last.engine_loss)
                );
            }
            text
        }
        Command::Evaluate { .. } => evaluate_stage(&cfg, &raw, out)?.to_text(),
        Command::Run { .. } => run_experiment(&cfg, &raw, out)?.to_text(),
        Command::Sweep { .. } => {
            let mut text = String::new();
            for (label, s) in sweep(&cfg, &raw, out)? {
                text += &format!("[{label}]\n{}", s.to_text());
            }
            text
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(text) => {
            if !cli.global.quiet {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, HarnessError::Config(_)) {
                2
            } else {
                1
            })
        }
    }
}
