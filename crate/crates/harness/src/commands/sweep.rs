use std::path::Path;

use topp_core::pipeline::{sweep_p, HeadInstance};
use topp_core::ThresholdP;

use crate::report::CsvOut;
use crate::{fields, Config, HarnessError, Workload};

pub const SWEEP_COLUMNS: [&str; 9] = [
    "p",
    "instances",
    "mean_b0",
    "mean_b1",
    "mean_attained_mass",
    "mean_residual_error",
    "mean_modeled_units",
    "mean_speedup",
    "p_bound_violations",
];

/// Every query head of the workload, each with its own copy of its KV head.
pub(crate) fn head_instances(workload: &Workload) -> Vec<HeadInstance<f32>> {
    workload
        .iter()
        .flat_map(|item| {
            let (keys, values) = (item.keys, item.values);
            item.queries
                .into_iter()
                .map(move |q| HeadInstance {
                    q,
                    keys: keys.clone(),
                    values: values.clone(),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// One row per threshold, averaged over every query head. Layer bypass and
/// head grouping do not apply.
pub fn cmd_sweep_p(
    cfg: &Config,
    grid: &[ThresholdP],
    out: Option<&Path>,
) -> Result<(), HarnessError> {
    cfg.validate()?;
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(HarnessError::Config("p grid must be ascending".into()));
    }
    let workload = Workload::new(&cfg.workload)?;
    let instances = head_instances(&workload);
    let mut csv = CsvOut::create(out, &SWEEP_COLUMNS)?;
    if instances.is_empty() {
        return csv.finish();
    }
    let mut pcfg = cfg.pipeline_config();
    pcfg.group_size = 1;
    for row in sweep_p(&instances, &pcfg, grid)? {
        csv.row(&fields![
            row.p,
            instances.len(),
            row.mean_b0,
            row.mean_b1,
            row.mean_attained_mass,
            row.mean_residual_error,
            row.mean_modeled_units,
            row.mean_speedup,
            row.p_bound_violations,
        ])?;
    }
    csv.finish()
}
