//! Drivers behind the `topp` subcommands.

mod budget_curve;
mod oracle_check;
mod quant_bench;
mod run;
mod sweep;

pub use budget_curve::{cmd_budget_curve, BUDGET_CURVE_COLUMNS};
pub use oracle_check::{
    cmd_oracle_check, OracleCheckOptions, OracleCheckSummary, ORACLE_CHECK_COLUMNS,
};
pub use quant_bench::{cmd_quant_bench, QUANT_BENCH_COLUMNS};
pub use run::{cmd_run, summary_path, RunSummary, RUN_COLUMNS};
pub use sweep::{cmd_sweep_p, SWEEP_COLUMNS};

use topp_core::ThresholdP;

use crate::HarnessError;

/// Parses a comma-separated list of thresholds.
pub fn parse_p_grid(s: &str) -> Result<Vec<ThresholdP>, HarnessError> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .and_then(|p| ThresholdP::new(p).ok())
                .ok_or_else(|| HarnessError::Config(format!("invalid p {t:?}")))
        })
        .collect()
}

/// Parses a comma-separated list of estimator modes (`2`, `4`, `8`, `exact`).
pub fn parse_modes(s: &str) -> Result<Vec<topp_core::pipeline::EstimatorMode>, HarnessError> {
    s.split(',')
        .map(|t| {
            t.parse()
                .map_err(|_| HarnessError::Config(format!("invalid estimator {:?}", t.trim())))
        })
        .collect()
}
