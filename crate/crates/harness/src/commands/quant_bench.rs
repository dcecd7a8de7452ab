use std::path::Path;

use topp_core::pipeline::{run_head, EstimatorMode, KvContext, PruneReport};
use topp_core::stats;

use crate::report::CsvOut;
use crate::{fields, Config, HarnessError, Workload};

pub const QUANT_BENCH_COLUMNS: [&str; 14] = [
    "estimator",
    "p",
    "runs",
    "mean_b0",
    "mean_b1",
    "mean_true_mass",
    "mean_candidate_mass",
    "min_candidate_mass",
    "reach_rate",
    "mean_estimator_spearman",
    "mean_residual_error",
    "mean_estimator_bytes",
    "bytes_per_candidate",
    "mean_speedup",
];

/// Runs every query head once per estimator mode and writes one summary row
/// per mode. `reach_rate` is the fraction of runs whose candidate-relative
/// mass reaches `p`.
pub fn cmd_quant_bench(
    cfg: &Config,
    modes: &[EstimatorMode],
    out: Option<&Path>,
) -> Result<(), HarnessError> {
    cfg.validate()?;
    let workload = Workload::new(&cfg.workload)?;
    let configs: Vec<_> = modes
        .iter()
        .map(|&m| {
            let mut c = cfg.pipeline_config();
            c.estimator = m;
            c.group_size = 1;
            c
        })
        .collect();
    let mut reports: Vec<Vec<PruneReport>> = vec![Vec::new(); modes.len()];
    for item in workload.iter() {
        for (pcfg, acc) in configs.iter().zip(&mut reports) {
            let ctx = KvContext::build(&item.keys, &item.values, pcfg)?;
            for q in &item.queries {
                acc.push(run_head(q, &ctx, pcfg)?.report);
            }
        }
    }

    let p = cfg.prune.p.get();
    let mut csv = CsvOut::create(out, &QUANT_BENCH_COLUMNS)?;
    for (mode, rs) in modes.iter().zip(&reports) {
        if rs.is_empty() {
            continue;
        }
        let mean = |f: fn(&PruneReport) -> f64| stats::mean(&rs.iter().map(f).collect::<Vec<_>>());
        let min_candidate = rs
            .iter()
            .map(|r| r.attained_candidate_mass)
            .fold(f64::INFINITY, f64::min);
        let reached = rs
            .iter()
            .filter(|r| r.attained_candidate_mass >= p - topp_core::MASS_SLACK)
            .count();
        let per_candidate = rs
            .iter()
            .find(|r| r.b0 > 0)
            .map_or(0.0, |r| r.estimator_bytes as f64 / r.b0 as f64);
        csv.row(&fields![
            mode.to_string(),
            p,
            rs.len(),
            mean(|r| r.b0 as f64),
            mean(|r| r.b1 as f64),
            mean(|r| r.attained_true_mass),
            mean(|r| r.attained_candidate_mass),
            min_candidate,
            reached as f64 / rs.len() as f64,
            mean(|r| r.estimator_spearman),
            mean(|r| r.residual_error),
            mean(|r| r.estimator_bytes as f64),
            per_candidate,
            mean(|r| r.cost.speedup()),
        ])?;
    }
    csv.finish()
}
