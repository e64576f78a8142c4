use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rclqr_cli::commands::{cmd_evaluate, cmd_moments, cmd_oracle, cmd_train, TrainOptions, EVALUATE_STEPS};
use rclqr_cli::{load_config, CliError, Exit, SeedRange};

/// Actor-critic learning for risk-constrained LQR, with a model-based oracle.
///
/// Exit status: 0 success, 1 I/O error, 2 config error, 3 instability,
/// 4 reference solver failure, 5 dimension mismatch. Verbosity is read from
/// RCLQR_LOG (error, info, debug).
#[derive(Debug, Parser)]
#[command(name = "rclqr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the actor-critic learner and write the CSV trace.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `run.steps`.
        #[arg(long)]
        steps: Option<u64>,
        /// Also emit a matplotlib script for the trace(s).
        #[arg(long)]
        plots: bool,
        /// Independent runs over a seed range, `a..b` or `a..=b`.
        #[arg(long, conflicts_with = "seed")]
        seeds: Option<SeedRange>,
    },
    /// Solve for the reference saddle point (X*, mu*) and print its certificate.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form and simulated costs of a policy file from `train` or `oracle`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// JSON policy file (`results.json` or `oracle.json`).
        #[arg(long)]
        policy: PathBuf,
        /// Simulated steps for the long-run estimates.
        #[arg(long, default_value_t = EVALUATE_STEPS)]
        steps: usize,
    },
    /// Print the noise moments and the reformulated constraint level.
    Moments {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<Exit, CliError> {
    match cli.command {
        Command::Train {
            common,
            steps,
            plots,
            seeds,
        } => {
            let cfg = load_config(&common.config)?;
            let opts = TrainOptions {
                out_dir: common.out,
                seed: common.seed,
                steps,
                plots,
                seeds: seeds.map(|s| s.0),
            };
            let reports = cmd_train(&cfg, &opts)?;
            Ok(if reports.iter().all(|r| r.completed()) {
                Exit::Success
            } else {
                Exit::Instability
            })
        }
        Command::Oracle { common } => {
            let cfg = with_seed(load_config(&common.config)?, common.seed);
            cmd_oracle(&cfg, &common.out)?;
            Ok(Exit::Success)
        }
        Command::Evaluate { common, policy, steps } => {
            let cfg = with_seed(load_config(&common.config)?, common.seed);
            cmd_evaluate(&cfg, &policy, steps)?;
            Ok(Exit::Success)
        }
        Command::Moments { common } => {
            let cfg = with_seed(load_config(&common.config)?, common.seed);
            cmd_moments(&cfg)?;
            Ok(Exit::Success)
        }
    }
}

fn with_seed(mut cfg: rclqr_cli::RunConfig, seed: Option<u64>) -> rclqr_cli::RunConfig {
    if let Some(s) = seed {
        cfg.file.run.seed = s;
    }
    cfg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RCLQR_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code.into(),
        Err(e) => {
            log::error!("{e}");
            e.exit().into()
        }
    }
}
