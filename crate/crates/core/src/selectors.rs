//! Base token selectors that propose a conservative candidate set, plus the
//! group-union used when several query heads share one KV head.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::quant::PageMetadata;
use crate::{Error, Matrix, Real, Result, TokenSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum SelectorKind {
    /// Every token.
    Full,
    /// Page-granular upper-bound scores from per-page channel min/max.
    Quest,
    /// Scores from a few high-magnitude key channels.
    ChannelPruned,
    /// Attention sinks plus a recent window; query-agnostic.
    SinkWindow,
}

/// Candidate budget `B0`, absolute or as a fraction of the context.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Budget {
    Tokens(usize),
    Fraction(f64),
}

impl Budget {
    /// Token count for a context of `n`, clamped to `n`. Fractions round up.
    pub fn resolve(self, n: usize) -> Result<usize> {
        match self {
            Budget::Tokens(b) => Ok(b.min(n)),
            Budget::Fraction(f) if f > 0.0 && f <= 1.0 => {
                Ok((num_traits::Float::ceil(f * n as f64) as usize).min(n))
            }
            Budget::Fraction(_) => Err(Error::InvalidConfig("budget fraction must be in (0, 1]")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields, default)
)]
pub struct SelectorConfig {
    pub kind: SelectorKind,
    pub budget: Budget,
    pub page_size: usize,
    pub top_channels: usize,
    pub sink: usize,
    pub window: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            kind: SelectorKind::Quest,
            budget: Budget::Fraction(0.25),
            page_size: 16,
            top_channels: 16,
            sink: 4,
            window: 64,
        }
    }
}

impl SelectorConfig {
    pub fn full() -> Self {
        Self {
            kind: SelectorKind::Full,
            budget: Budget::Fraction(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.resolve(1)?;
        if self.page_size == 0 {
            return Err(Error::InvalidConfig("page_size must be at least 1"));
        }
        if self.kind == SelectorKind::ChannelPruned && self.top_channels == 0 {
            return Err(Error::InvalidConfig("top_channels must be at least 1"));
        }
        Ok(())
    }
}

/// Query heads per KV head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupMap {
    heads: usize,
    group_size: usize,
}

impl GroupMap {
    pub fn new(heads: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || heads == 0 || heads % group_size != 0 {
            return Err(Error::IndivisibleHeads { heads, group_size });
        }
        Ok(Self { heads, group_size })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> usize {
        self.heads / self.group_size
    }

    pub fn group_of(&self, head: usize) -> usize {
        head / self.group_size
    }

    pub fn heads_of(&self, group: usize) -> core::ops::Range<usize> {
        group * self.group_size..(group + 1) * self.group_size
    }
}

/// Indices of the `budget` highest scores; equal scores prefer lower index.
fn top_by_score(scores: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order.truncate(budget);
    order
}

pub fn select_full(n: usize) -> TokenSelection {
    TokenSelection::all(n)
}

/// Upper bound of `q . k` over every key inside the page's channel box.
pub fn quest_page_score<F: Real>(q: &[F], page: &PageMetadata) -> f64 {
    q.iter()
        .zip(page.min.iter().zip(&page.max))
        .map(|(&qc, (&lo, &hi))| {
            let qc = qc.as_f64();
            (qc * lo).max(qc * hi)
        })
        .sum()
}

/// Keeps the `ceil(budget / page_size)` pages with the highest upper-bound
/// scores and returns every token in them.
pub fn select_quest<F: Real>(
    q: &[F],
    metadata: &[PageMetadata],
    budget: usize,
    page_size: usize,
) -> Result<TokenSelection> {
    let last = metadata.last().ok_or(Error::Empty("page metadata"))?;
    if page_size == 0 {
        return Err(Error::InvalidConfig("page_size must be at least 1"));
    }
    if let Some(page) = metadata.iter().find(|m| m.min.len() != q.len()) {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            found: page.min.len(),
        });
    }
    let n = last.start + last.len;
    let scores: Vec<f64> = metadata.iter().map(|m| quest_page_score(q, m)).collect();
    let pages = budget.div_ceil(page_size).min(metadata.len());
    let chosen = top_by_score(&scores, pages);
    TokenSelection::from_indices(n, chosen.into_iter().flat_map(|p| metadata[p].tokens()))
}

/// A copy of the key cache reduced to its highest-magnitude channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReducedKeys<F> {
    pub channel_ids: Vec<usize>,
    pub keys: Matrix<F>,
}

impl<F: Real> ChannelReducedKeys<F> {
    /// Picks the `top_channels` channels with the largest mean `|k|`
    /// (lower channel index on ties), kept in ascending channel order.
    pub fn calibrate(keys: &Matrix<F>, top_channels: usize) -> Result<Self> {
        if top_channels == 0 {
            return Err(Error::Empty("channel set"));
        }
        if keys.rows() == 0 {
            return Err(Error::Empty("key matrix"));
        }
        let d = keys.cols();
        let mut mean_abs = alloc::vec![0.0; d];
        for row in keys.iter_rows() {
            for (m, &v) in mean_abs.iter_mut().zip(row) {
                *m += v.as_f64().abs();
            }
        }
        let mut ids = top_by_score(&mean_abs, top_channels.min(d));
        ids.sort_unstable();
        Self::from_channels(keys, ids)
    }

    pub fn from_channels(keys: &Matrix<F>, channel_ids: Vec<usize>) -> Result<Self> {
        if channel_ids.is_empty() {
            return Err(Error::Empty("channel set"));
        }
        if let Some(&c) = channel_ids.iter().find(|&&c| c >= keys.cols()) {
            return Err(Error::IndexOutOfRange {
                index: c,
                n: keys.cols(),
            });
        }
        let mut data = Vec::with_capacity(keys.rows() * channel_ids.len());
        for row in keys.iter_rows() {
            data.extend(channel_ids.iter().map(|&c| row[c]));
        }
        Ok(Self {
            keys: Matrix::new(keys.rows(), channel_ids.len(), data)?,
            channel_ids,
        })
    }
}

/// Top-`budget` tokens by the query dotted with the retained channels.
pub fn select_channel_pruned<F: Real>(
    q: &[F],
    reduced: &ChannelReducedKeys<F>,
    budget: usize,
) -> Result<TokenSelection> {
    if reduced.channel_ids.is_empty() {
        return Err(Error::Empty("channel set"));
    }
    if let Some(&c) = reduced.channel_ids.iter().find(|&&c| c >= q.len()) {
        return Err(Error::IndexOutOfRange {
            index: c,
            n: q.len(),
        });
    }
    let scores: Vec<f64> = reduced
        .keys
        .iter_rows()
        .map(|row| {
            reduced
                .channel_ids
                .iter()
                .zip(row)
                .map(|(&c, &k)| q[c].as_f64() * k.as_f64())
                .sum()
        })
        .collect();
    let n = reduced.keys.rows();
    TokenSelection::from_indices(n, top_by_score(&scores, budget.min(n)))
}

/// The first `sink` and the last `window` tokens.
pub fn select_sink_window(n: usize, sink: usize, window: usize) -> TokenSelection {
    if sink.saturating_add(window) >= n {
        return TokenSelection::all(n);
    }
    TokenSelection::from_indices(n, (0..sink).chain(n - window..n)).expect("indices below n")
}

/// Union of the selections made by every query head of one group.
pub fn group_union(selections: &[TokenSelection]) -> Result<TokenSelection> {
    let (first, rest) = selections
        .split_first()
        .ok_or(Error::Empty("group selection list"))?;
    rest.iter().try_fold(first.clone(), |acc, s| acc.union(s))
}

/// Inputs a selector may need besides the query.
#[derive(Debug, Clone, Copy)]
pub struct SelectorContext<'a, F> {
    pub n: usize,
    pub metadata: Option<&'a [PageMetadata]>,
    pub reduced: Option<&'a ChannelReducedKeys<F>>,
}

/// Runs the configured selector for one query.
pub fn select<F: Real>(
    cfg: &SelectorConfig,
    q: &[F],
    ctx: &SelectorContext<'_, F>,
) -> Result<TokenSelection> {
    let budget = cfg.budget.resolve(ctx.n)?;
    match cfg.kind {
        SelectorKind::Full => Ok(select_full(ctx.n)),
        SelectorKind::SinkWindow => Ok(select_sink_window(ctx.n, cfg.sink, cfg.window)),
        SelectorKind::Quest => {
            let meta = ctx
                .metadata
                .ok_or(Error::InvalidConfig("quest selector needs page metadata"))?;
            select_quest(q, meta, budget, cfg.page_size)
        }
        SelectorKind::ChannelPruned => {
            let reduced = ctx
                .reduced
                .ok_or(Error::InvalidConfig("channel selector needs reduced keys"))?;
            select_channel_pruned(q, reduced, budget)
        }
    }
}
