use std::path::Path;

use topp_core::{attention_weights, budget_curve, ThresholdP};

use crate::report::CsvOut;
use crate::{fields, Config, HarnessError, Workload};

pub const BUDGET_CURVE_COLUMNS: [&str; 9] = [
    "prompt",
    "step",
    "layer",
    "head",
    "n",
    "entropy",
    "p",
    "budget",
    "budget_fraction",
];

/// Oracle top-p budget of every query head's exact attention at each
/// threshold.
pub fn cmd_budget_curve(
    cfg: &Config,
    grid: &[ThresholdP],
    out: Option<&Path>,
) -> Result<(), HarnessError> {
    cfg.validate()?;
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(HarnessError::Config("p grid must be ascending".into()));
    }
    let workload = Workload::new(&cfg.workload)?;
    let mut csv = CsvOut::create(out, &BUDGET_CURVE_COLUMNS)?;
    for item in workload.iter() {
        for (offset, q) in item.queries.iter().enumerate() {
            let w = attention_weights(q, &item.keys)?;
            let n = w.len();
            let entropy = w.entropy();
            for (p, budget) in budget_curve(&w, grid)? {
                csv.row(&fields![
                    item.prompt,
                    item.step,
                    item.layer,
                    item.first_head + offset,
                    n,
                    entropy,
                    p,
                    budget,
                    budget as f64 / n as f64,
                ])?;
            }
        }
    }
    csv.finish()
}
