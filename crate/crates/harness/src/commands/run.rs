use std::path::{Path, PathBuf};

use serde::Serialize;
use topp_core::pipeline::{
    collect_dynamism, run_dense, run_group, DynamismStats, KvContext, PruneReport, ReportTag,
};
use topp_core::stats;

use crate::report::{write_json, CsvOut};
use crate::{fields, Config, HarnessError, Workload};

/// Columns of the `run` CSV, one row per `(prompt, step, layer, head)`.
pub const RUN_COLUMNS: [&str; 21] = [
    "prompt",
    "step",
    "layer",
    "head",
    "kv_head",
    "bypassed",
    "n",
    "b0",
    "b1",
    "attained_true_mass",
    "attained_candidate_mass",
    "estimator_spearman",
    "residual_error",
    "unnormalized_error",
    "error_bound",
    "value_norm",
    "iterations",
    "estimator_bytes",
    "modeled_units",
    "baseline_units",
    "speedup",
];

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub reports: usize,
    pub mean_b0: f64,
    pub mean_b1: f64,
    pub mean_attained_true_mass: f64,
    pub mean_attained_candidate_mass: f64,
    /// Mean residual error over all reports.
    pub residual_error: f64,
    pub max_residual_error: f64,
    pub mean_speedup: f64,
    /// Absent for an empty workload.
    pub dynamism: Option<DynamismStats>,
}

/// `run.csv` gets its summary at `run.summary.json`.
pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

/// Runs every workload item through the pipeline, writing the CSV to `out`
/// and the JSON summary next to it.
pub fn cmd_run(cfg: &Config, out: &Path) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let pcfg = cfg.pipeline_config();
    let workload = Workload::new(&cfg.workload)?;
    let mut csv = CsvOut::create(Some(out), &RUN_COLUMNS)?;
    let mut tagged: Vec<(ReportTag, PruneReport)> = Vec::new();

    for item in workload.iter() {
        let ctx = KvContext::build(&item.keys, &item.values, &pcfg)?;
        let bypassed = pcfg.is_bypassed(item.layer);
        let reports: Vec<PruneReport> = if bypassed {
            item.queries
                .iter()
                .map(|q| run_dense(q, &ctx).map(|r| r.report))
                .collect::<Result<_, _>>()?
        } else {
            run_group(&item.queries, &ctx, &pcfg)?
                .heads
                .into_iter()
                .map(|h| h.report)
                .collect()
        };
        for (offset, r) in reports.into_iter().enumerate() {
            let tag = ReportTag {
                prompt: item.prompt,
                step: item.step,
                layer: item.layer,
                head: item.first_head + offset,
            };
            csv.row(&fields![
                tag.prompt,
                tag.step,
                tag.layer,
                tag.head,
                item.group,
                bypassed,
                r.n,
                r.b0,
                r.b1,
                r.attained_true_mass,
                r.attained_candidate_mass,
                r.estimator_spearman,
                r.residual_error,
                r.unnormalized_error,
                r.error_bound,
                r.value_norm,
                r.iterations,
                r.estimator_bytes,
                r.cost.pruned_units(),
                r.cost.baseline_units(),
                r.cost.speedup(),
            ])?;
            tagged.push((tag, r));
        }
    }
    csv.finish()?;

    let summary = summarize(&tagged)?;
    write_json(&summary_path(out), &summary)?;
    Ok(summary)
}

fn summarize(tagged: &[(ReportTag, PruneReport)]) -> Result<RunSummary, HarnessError> {
    let col = |f: fn(&PruneReport) -> f64| tagged.iter().map(|(_, r)| f(r)).collect::<Vec<_>>();
    let mean = |f: fn(&PruneReport) -> f64| {
        if tagged.is_empty() {
            0.0
        } else {
            stats::mean(&col(f))
        }
    };
    let dynamism = if tagged.is_empty() {
        None
    } else {
        Some(collect_dynamism(tagged.iter().map(|(t, r)| (*t, r)))?)
    };
    Ok(RunSummary {
        reports: tagged.len(),
        mean_b0: mean(|r| r.b0 as f64),
        mean_b1: mean(|r| r.b1 as f64),
        mean_attained_true_mass: mean(|r| r.attained_true_mass),
        mean_attained_candidate_mass: mean(|r| r.attained_candidate_mass),
        residual_error: mean(|r| r.residual_error),
        max_residual_error: col(|r| r.residual_error).into_iter().fold(0.0, f64::max),
        mean_speedup: mean(|r| r.cost.speedup()),
        dynamism,
    })
}
