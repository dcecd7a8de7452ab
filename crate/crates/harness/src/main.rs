use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topp_harness::commands::{
    cmd_budget_curve, cmd_oracle_check, cmd_quant_bench, cmd_run, cmd_sweep_p, parse_modes,
    parse_p_grid, OracleCheckOptions,
};
use topp_harness::{Config, HarnessError};

#[derive(Parser)]
#[command(name = "topp", version, about = "Top-p sparse attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides the workload seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the workload through the pipeline; writes a CSV and a JSON summary.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
    },
    /// Compare the binary-search pruner against the sorting oracle.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "N", default_value_t = 10_000)]
        trials: usize,
        /// Overrides the pruner's stopping gap.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Sweep the mass threshold over a grid.
    SweepP {
        #[command(flatten)]
        common: Common,
        #[arg(
            long,
            value_name = "LIST",
            default_value = "0.5,0.6,0.7,0.8,0.85,0.9,0.95,0.99"
        )]
        p_grid: String,
    },
    /// Compare estimator precisions at the configured threshold.
    QuantBench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "LIST", default_value = "2,4,8,exact")]
        bits: String,
    },
    /// Oracle budget against threshold for every query head.
    BudgetCurve {
        #[command(flatten)]
        common: Common,
        #[arg(
            long,
            value_name = "LIST",
            default_value = "0.5,0.6,0.7,0.8,0.85,0.9,0.95,0.99"
        )]
        p_grid: String,
    },
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Config, HarnessError> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.workload.seed = s;
    }
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run { config, out, seed } => {
            let cfg = load(Some(&config), seed)?;
            let summary = cmd_run(&cfg, &out)?;
            eprintln!(
                "run: {} reports, mean B1 {:.1}, mean residual error {:.3e}",
                summary.reports, summary.mean_b1, summary.residual_error
            );
            Ok(())
        }
        Command::OracleCheck {
            common,
            trials,
            epsilon,
        } => {
            let cfg = load(common.config.as_deref(), None)?;
            let mut prune = cfg.prune;
            if let Some(e) = epsilon {
                prune.epsilon = e;
            }
            prune
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let opts = OracleCheckOptions {
                seed: common.seed.unwrap_or(cfg.workload.seed),
                trials,
                prune,
            };
            let summary = cmd_oracle_check(&opts, common.out.as_deref(), &mut io::stderr())?;
            match summary.failures {
                0 => Ok(()),
                n => Err(HarnessError::CheckFailed(n)),
            }
        }
        Command::SweepP { common, p_grid } => {
            let cfg = load(common.config.as_deref(), common.seed)?;
            cmd_sweep_p(&cfg, &parse_p_grid(&p_grid)?, common.out.as_deref())
        }
        Command::QuantBench { common, bits } => {
            let cfg = load(common.config.as_deref(), common.seed)?;
            cmd_quant_bench(&cfg, &parse_modes(&bits)?, common.out.as_deref())
        }
        Command::BudgetCurve { common, p_grid } => {
            let cfg = load(common.config.as_deref(), common.seed)?;
            cmd_budget_curve(&cfg, &parse_p_grid(&p_grid)?, common.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("topp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
