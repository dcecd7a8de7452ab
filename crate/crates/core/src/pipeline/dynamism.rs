//! Budget dynamism along the prompt, decode-step, layer and head axes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::PruneReport;
use crate::stats;
use crate::{Error, Result};

/// Fixed histogram edges over the budget fraction `B1 / n`.
pub const HISTOGRAM_EDGES: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Where a report came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ReportTag {
    pub prompt: usize,
    pub step: usize,
    pub layer: usize,
    pub head: usize,
}

/// Budgets averaged per value of one axis, then summarized across values.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AxisSummary {
    pub axis: String,
    /// `(axis value, mean B1 tokens)`, ordered by axis value.
    pub groups: Vec<(usize, f64)>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Counts of per-group mean budget fractions over [`HISTOGRAM_EDGES`].
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DynamismStats {
    pub reports: usize,
    pub histogram_edges: Vec<f64>,
    pub prompt: AxisSummary,
    pub step: AxisSummary,
    pub layer: AxisSummary,
    pub head: AxisSummary,
}

#[derive(Default)]
struct Acc {
    budget: f64,
    fraction: f64,
    count: usize,
}

fn summarize(axis: &str, groups: BTreeMap<usize, Acc>) -> AxisSummary {
    let means: Vec<(usize, f64)> = groups
        .iter()
        .map(|(&k, a)| (k, a.budget / a.count as f64))
        .collect();
    let fractions: Vec<f64> = groups
        .values()
        .map(|a| a.fraction / a.count as f64)
        .collect();
    let values: Vec<f64> = means.iter().map(|&(_, m)| m).collect();
    AxisSummary {
        axis: axis.into(),
        mean: stats::mean(&values),
        std: stats::std_dev(&values),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        histogram: stats::histogram(&fractions, &HISTOGRAM_EDGES),
        groups: means,
    }
}

/// Consumes tagged reports in any order. Every tag may appear once.
pub fn collect_dynamism<'a, I>(reports: I) -> Result<DynamismStats>
where
    I: IntoIterator<Item = (ReportTag, &'a PruneReport)>,
{
    let mut seen = BTreeMap::new();
    let mut axes: [BTreeMap<usize, Acc>; 4] = Default::default();
    for (tag, report) in reports {
        if seen.insert(tag, ()).is_some() {
            return Err(Error::InconsistentTags);
        }
        let budget = report.b1 as f64;
        let fraction = if report.n == 0 {
            0.0
        } else {
            budget / report.n as f64
        };
        for (axis, key) in axes
            .iter_mut()
            .zip([tag.prompt, tag.step, tag.layer, tag.head])
        {
            let acc = axis.entry(key).or_default();
            acc.budget += budget;
            acc.fraction += fraction;
            acc.count += 1;
        }
    }
    if seen.is_empty() {
        return Err(Error::Empty("report stream"));
    }
    let [prompt, step, layer, head] = axes;
    Ok(DynamismStats {
        reports: seen.len(),
        histogram_edges: HISTOGRAM_EDGES.to_vec(),
        prompt: summarize("prompt", prompt),
        step: summarize("step", step),
        layer: summarize("layer", layer),
        head: summarize("head", head),
    })
}
