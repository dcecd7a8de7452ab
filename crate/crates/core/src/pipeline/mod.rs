//! Select-then-prune decoding attention for one KV head.
//!
//! For each query: the token selector proposes `B0` candidates, the
//! estimator scores them (from the quantized key cache or exactly), a softmax
//! over the candidate scores is pruned to the top-p set of `B1` tokens, and
//! sparse attention runs over that set. Reports measure the result against
//! exact full-context attention.

mod cost;
mod dynamism;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

pub use cost::{
    memory_overhead, model_speedup, model_speedup_ratio, CostTerms, DEFAULT_ESTIMATOR_FRACTION,
    DEFAULT_SELECTOR_FRACTION,
};
pub use dynamism::{collect_dynamism, AxisSummary, DynamismStats, ReportTag, HISTOGRAM_EDGES};

use crate::attention::{attend, attention_weights, frobenius_norm, logits, output_error};
use crate::pruner::prune_candidates;
use crate::quant::{
    build_cache, estimate_scores, estimate_scores_exact, page_metadata, PageMetadata,
    PagedQuantKeyCache, QuantBits, ScoreEstimate,
};
use crate::selectors::{
    group_union, select, ChannelReducedKeys, GroupMap, SelectorConfig, SelectorContext,
    SelectorKind,
};
use crate::{
    sparse_attention, stats, AttentionWeights, BinarySearchConfig, Error, Matrix, PruneOutcome,
    Real, Result, ThresholdP, TokenSelection,
};

/// How candidate scores are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "String", into = "String")
)]
pub enum EstimatorMode {
    Exact,
    Quantized(QuantBits),
}

impl EstimatorMode {
    /// Load cost of one candidate relative to a 16-bit key row.
    pub fn load_fraction(self) -> f64 {
        match self {
            EstimatorMode::Exact => 1.0,
            EstimatorMode::Quantized(bits) => bits.bits() as f64 / 16.0,
        }
    }
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorMode::Exact => f.write_str("exact"),
            EstimatorMode::Quantized(b) => write!(f, "{}", b.bits()),
        }
    }
}

impl FromStr for EstimatorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("exact") {
            return Ok(EstimatorMode::Exact);
        }
        let digits = s
            .strip_prefix("int")
            .or_else(|| s.strip_prefix("INT"))
            .unwrap_or(s);
        let bits = digits
            .parse::<u32>()
            .map_err(|_| Error::InvalidConfig("estimator must be exact, 2, 4 or 8"))?;
        QuantBits::new(bits).map(EstimatorMode::Quantized)
    }
}

impl TryFrom<String> for EstimatorMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorMode> for String {
    fn from(m: EstimatorMode) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields, default)
)]
pub struct PipelineConfig {
    pub selector: SelectorConfig,
    pub prune: BinarySearchConfig,
    pub estimator: EstimatorMode,
    /// Divide the sparse output by the selection's mass.
    pub renormalize_output: bool,
    /// Query heads sharing one KV head.
    pub group_size: usize,
    /// Layers that run dense attention.
    pub bypass_layers: Vec<usize>,
    pub selector_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            selector: SelectorConfig::default(),
            prune: BinarySearchConfig::default(),
            estimator: EstimatorMode::Quantized(QuantBits::Four),
            renormalize_output: true,
            group_size: 1,
            bypass_layers: alloc::vec![0, 1],
            selector_fraction: DEFAULT_SELECTOR_FRACTION,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.selector.validate()?;
        self.prune.validate()?;
        if self.group_size == 0 {
            return Err(Error::InvalidConfig("group_size must be at least 1"));
        }
        if !self.selector_fraction.is_finite() || self.selector_fraction < 0.0 {
            return Err(Error::InvalidConfig(
                "selector_fraction must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn with_p(&self, p: ThresholdP) -> Self {
        let mut cfg = self.clone();
        cfg.prune.p = p;
        cfg
    }

    pub fn is_bypassed(&self, layer: usize) -> bool {
        self.bypass_layers.contains(&layer)
    }

    fn charges_selector(&self) -> bool {
        matches!(
            self.selector.kind,
            SelectorKind::Quest | SelectorKind::ChannelPruned
        )
    }
}

/// Per-query outcome of the pipeline, measured against exact attention.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PruneReport {
    pub n: usize,
    pub b0: usize,
    pub b1: usize,
    /// Exact full-context mass of the final selection.
    pub attained_true_mass: f64,
    /// Exact mass of the final selection relative to the candidate set.
    pub attained_candidate_mass: f64,
    /// Rank agreement of estimated and exact candidate logits (NaN below two
    /// candidates).
    pub estimator_spearman: f64,
    /// `||o - o_hat||` for the configured output.
    pub residual_error: f64,
    /// `||o - o_hat||` without renormalization.
    pub unnormalized_error: f64,
    /// `(1 - attained_true_mass) * ||V||_F`.
    pub error_bound: f64,
    pub value_norm: f64,
    pub iterations: u32,
    pub estimator_bytes: usize,
    pub cost: CostTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadRun<F> {
    pub output: Vec<F>,
    pub outcome: PruneOutcome,
    pub report: PruneReport,
}

/// Results for the query heads of one group, which share a final token set.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRun<F> {
    pub heads: Vec<HeadRun<F>>,
    /// Shared final selection.
    pub selection: TokenSelection,
    /// Size of the union of the heads' candidate sets.
    pub b0: usize,
    pub b1: usize,
}

/// One KV head with the derived structures the configured selector and
/// estimator read. Built once and shared across queries.
#[derive(Debug, Clone)]
pub struct KvContext<'a, F> {
    pub keys: &'a Matrix<F>,
    pub values: &'a Matrix<F>,
    pub cache: Option<PagedQuantKeyCache>,
    pub metadata: Option<Vec<PageMetadata>>,
    pub reduced: Option<ChannelReducedKeys<F>>,
    value_norm: f64,
}

impl<'a, F: Real> KvContext<'a, F> {
    pub fn build(keys: &'a Matrix<F>, values: &'a Matrix<F>, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if keys.rows() == 0 {
            return Err(Error::Empty("key matrix"));
        }
        if values.rows() != keys.rows() {
            return Err(Error::DimensionMismatch {
                expected: keys.rows(),
                found: values.rows(),
            });
        }
        let page_size = cfg.selector.page_size;
        let (cache, mut metadata) = match cfg.estimator {
            EstimatorMode::Quantized(bits) => {
                let (cache, meta) = build_cache(keys, page_size, bits)?;
                (Some(cache), Some(meta))
            }
            EstimatorMode::Exact => (None, None),
        };
        if cfg.selector.kind != SelectorKind::Quest {
            metadata = None;
        } else if metadata.is_none() {
            metadata = Some(page_metadata(keys, page_size)?);
        }
        let reduced = match cfg.selector.kind {
            SelectorKind::ChannelPruned => Some(ChannelReducedKeys::calibrate(
                keys,
                cfg.selector.top_channels,
            )?),
            _ => None,
        };
        Ok(Self {
            keys,
            values,
            cache,
            metadata,
            reduced,
            value_norm: frobenius_norm(values)?.as_f64(),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.keys.rows()
    }

    pub fn value_norm(&self) -> f64 {
        self.value_norm
    }

    fn selector_context(&self) -> SelectorContext<'_, F> {
        SelectorContext {
            n: self.n(),
            metadata: self.metadata.as_deref(),
            reduced: self.reduced.as_ref(),
        }
    }

    fn estimate(&self, q: &[F], candidates: &TokenSelection) -> Result<ScoreEstimate<F>> {
        match &self.cache {
            Some(cache) => estimate_scores(q, cache, candidates),
            None => estimate_scores_exact(q, self.keys, candidates),
        }
    }
}

/// Select, estimate, prune and attend for one query head.
pub fn run_head<F: Real>(
    q: &[F],
    ctx: &KvContext<'_, F>,
    cfg: &PipelineConfig,
) -> Result<HeadRun<F>> {
    let mut group = run_group(core::slice::from_ref(&q), ctx, cfg)?;
    Ok(group.heads.pop().expect("one head in, one head out"))
}

/// Runs `run_head`, or dense attention when `layer` is bypassed.
pub fn run_head_at_layer<F: Real>(
    layer: usize,
    q: &[F],
    ctx: &KvContext<'_, F>,
    cfg: &PipelineConfig,
) -> Result<HeadRun<F>> {
    if cfg.is_bypassed(layer) {
        run_dense(q, ctx)
    } else {
        run_head(q, ctx, cfg)
    }
}

/// Dense attention reported in the same shape as a pruned head.
pub fn run_dense<F: Real>(q: &[F], ctx: &KvContext<'_, F>) -> Result<HeadRun<F>> {
    let n = ctx.n();
    let w = attention_weights(q, ctx.keys)?;
    let output = attend(&w, ctx.values)?;
    let selection = TokenSelection::all(n).with_mass(&w)?;
    let report = PruneReport {
        n,
        b0: n,
        b1: n,
        attained_true_mass: 1.0,
        attained_candidate_mass: 1.0,
        estimator_spearman: f64::NAN,
        value_norm: ctx.value_norm,
        // No estimation pass: every token is loaded once, speedup 1.
        cost: CostTerms {
            estimator_tokens: n,
            attention_tokens: n,
            ..CostTerms::default()
        },
        ..PruneReport::default()
    };
    Ok(HeadRun {
        output,
        outcome: PruneOutcome {
            selection,
            threshold: 0.0,
            iterations: 0,
        },
        report,
    })
}

/// Runs the query heads of one group against their shared KV head.
///
/// Candidate sets of all heads are unioned before estimation; each head
/// prunes the union with its own estimated weights, and the union of the
/// pruned sets is the token set every head attends to.
pub fn run_group<F: Real, Q: AsRef<[F]>>(
    queries: &[Q],
    ctx: &KvContext<'_, F>,
    cfg: &PipelineConfig,
) -> Result<GroupRun<F>> {
    if queries.is_empty() {
        return Err(Error::Empty("query group"));
    }
    let n = ctx.n();
    let sel_ctx = ctx.selector_context();
    let per_head: Vec<TokenSelection> = queries
        .iter()
        .map(|q| select(&cfg.selector, q.as_ref(), &sel_ctx))
        .collect::<Result<_>>()?;
    let candidates = group_union(&per_head)?;
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }

    let mut estimates = Vec::with_capacity(queries.len());
    let mut outcomes = Vec::with_capacity(queries.len());
    for q in queries {
        let est = ctx.estimate(q.as_ref(), &candidates)?;
        let local = AttentionWeights::from_logits(&est.logits)?;
        outcomes.push(prune_candidates(local.as_slice(), &candidates, &cfg.prune)?);
        estimates.push(est);
    }
    let shared = outcomes
        .iter()
        .skip(1)
        .try_fold(outcomes[0].selection.clone(), |acc, o| {
            acc.union(&o.selection)
        })?;

    let cost = CostTerms {
        selector_tokens: if cfg.charges_selector() { n } else { 0 },
        estimator_tokens: candidates.len(),
        attention_tokens: shared.len(),
        selector_fraction: cfg.selector_fraction,
        estimator_fraction: cfg.estimator.load_fraction(),
    };

    let mut heads = Vec::with_capacity(queries.len());
    for ((q, est), outcome) in queries.iter().zip(estimates).zip(outcomes) {
        let q = q.as_ref();
        let exact_logits = logits(q, ctx.keys)?;
        let w = AttentionWeights::from_logits(&exact_logits)?;
        let full = attend(&w, ctx.values)?;
        let output = sparse_attention(&w, ctx.values, &shared, cfg.renormalize_output)?;
        let unnormalized = if cfg.renormalize_output {
            sparse_attention(&w, ctx.values, &shared, false)?
        } else {
            output.clone()
        };
        let true_mass = shared.mass_under(&w)?;
        let candidate_mass = w.mass_of(candidates.indices());
        let est_logits: Vec<f64> = est.logits.iter().map(|v| v.as_f64()).collect();
        let cand_logits: Vec<f64> = candidates
            .indices()
            .iter()
            .map(|&i| exact_logits[i].as_f64())
            .collect();
        let report = PruneReport {
            n,
            b0: candidates.len(),
            b1: shared.len(),
            attained_true_mass: true_mass,
            attained_candidate_mass: if candidate_mass > 0.0 {
                true_mass / candidate_mass
            } else {
                0.0
            },
            estimator_spearman: stats::spearman(&est_logits, &cand_logits),
            residual_error: output_error(&full, &output)?.as_f64(),
            unnormalized_error: output_error(&full, &unnormalized)?.as_f64(),
            error_bound: (1.0 - true_mass).max(0.0) * ctx.value_norm,
            value_norm: ctx.value_norm,
            iterations: outcome.iterations,
            estimator_bytes: est.bytes_touched,
            cost,
        };
        heads.push(HeadRun {
            output,
            outcome,
            report,
        });
    }
    Ok(GroupRun {
        heads,
        b0: candidates.len(),
        b1: shared.len(),
        selection: shared,
    })
}

/// Runs every query head against its group's KV head. `queries` are ordered
/// by head; `kv[g]` serves heads `g * group_size .. (g + 1) * group_size`.
pub fn run_grouped<F: Real, Q: AsRef<[F]>>(
    queries: &[Q],
    kv: &[KvContext<'_, F>],
    cfg: &PipelineConfig,
) -> Result<Vec<GroupRun<F>>> {
    let map = GroupMap::new(queries.len(), cfg.group_size)?;
    if kv.len() != map.groups() {
        return Err(Error::DimensionMismatch {
            expected: map.groups(),
            found: kv.len(),
        });
    }
    (0..map.groups())
        .map(|g| run_group(&queries[map.heads_of(g)], &kv[g], cfg))
        .collect()
}

/// One decode query against one KV head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadInstance<F> {
    pub q: Vec<F>,
    pub keys: Matrix<F>,
    pub values: Matrix<F>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SweepRow {
    pub p: f64,
    pub mean_b0: f64,
    pub mean_b1: f64,
    pub mean_attained_mass: f64,
    pub mean_residual_error: f64,
    pub mean_modeled_units: f64,
    pub mean_speedup: f64,
    /// Instances whose unnormalized error exceeds `(1 - p) ||V||_F`.
    pub p_bound_violations: usize,
}

/// Relative slack on the `(1 - p) ||V||_F` check, covering `f32` rounding.
pub const P_BOUND_RELATIVE_SLACK: f64 = 1e-6;

/// Runs every instance at every threshold of an ascending grid.
pub fn sweep_p<F: Real>(
    instances: &[HeadInstance<F>],
    cfg: &PipelineConfig,
    grid: &[ThresholdP],
) -> Result<Vec<SweepRow>> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::UnsortedGrid);
    }
    let contexts: Vec<KvContext<'_, F>> = instances
        .iter()
        .map(|inst| KvContext::build(&inst.keys, &inst.values, cfg))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for &p in grid {
        let cfg = cfg.with_p(p);
        let mut reports = Vec::with_capacity(instances.len());
        for (inst, ctx) in instances.iter().zip(&contexts) {
            reports.push(run_head(&inst.q, ctx, &cfg)?.report);
        }
        let mean_of = |f: &dyn Fn(&PruneReport) -> f64| {
            stats::mean(&reports.iter().map(f).collect::<Vec<_>>())
        };
        let bound = |r: &PruneReport| {
            (1.0 - p.get() + crate::MASS_SLACK) * r.value_norm
                + P_BOUND_RELATIVE_SLACK * r.value_norm
        };
        rows.push(SweepRow {
            p: p.get(),
            mean_b0: mean_of(&|r| r.b0 as f64),
            mean_b1: mean_of(&|r| r.b1 as f64),
            mean_attained_mass: mean_of(&|r| r.attained_true_mass),
            mean_residual_error: mean_of(&|r| r.residual_error),
            mean_modeled_units: mean_of(&|r| r.cost.pruned_units()),
            mean_speedup: mean_of(&|r| r.cost.speedup()),
            p_bound_violations: reports
                .iter()
                .filter(|r| r.unnormalized_error > bound(r))
                .count(),
        });
    }
    Ok(rows)
}
