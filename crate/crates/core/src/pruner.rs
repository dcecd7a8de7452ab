//! Top-p pruning by threshold binary search.
//!
//! Rather than sorting, the pruner brackets the weight threshold `l` such
//! that the tokens with `w >= l` carry at least `p` of the mass. Each
//! iteration is one fused pass over the weights computing the mass above the
//! midpoint together with the two bracket-refinement statistics: the smallest
//! weight above the lower bound and the largest weight not above the upper
//! bound. The search stops once their gap drops below `epsilon`, i.e. once at
//! most one distinct weight value is left inside `(l, r]` for any `epsilon`
//! smaller than the spacing of distinct weights.

use alloc::vec::Vec;

use crate::{reaches, AttentionWeights, Error, Real, Result, ThresholdP, TokenSelection};

/// Normalization tolerance accepted on pruner input.
pub const INPUT_MASS_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields, default)
)]
pub struct BinarySearchConfig {
    pub p: ThresholdP,
    /// Bracket resolution: the search stops when the weights left inside the
    /// bracket span less than this.
    pub epsilon: f64,
    pub max_iters: u32,
}

impl BinarySearchConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-15;
    pub const DEFAULT_MAX_ITERS: u32 = 64;

    pub fn new(p: f64) -> Result<Self> {
        Ok(Self {
            p: ThresholdP::new(p)?,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive and finite"));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1"));
        }
        ThresholdP::new(self.p.get()).map(|_| ())
    }
}

impl Default for BinarySearchConfig {
    fn default() -> Self {
        Self {
            p: ThresholdP::new(0.95).expect("valid"),
            epsilon: Self::DEFAULT_EPSILON,
            max_iters: Self::DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub selection: TokenSelection,
    /// Smallest selected weight; every selected token weighs at least this.
    /// Infinite for an empty selection.
    pub threshold: f64,
    pub iterations: u32,
}

/// Per-iteration statistics of one fused pass over the weights.
struct Pass {
    mass_at_or_above_mid: f64,
    min_above_mid: f64,
    max_upto_mid: f64,
    min_above_lo: f64,
    max_upto_hi: f64,
}

fn fused_pass(w: &[f64], lo: f64, mid: f64, hi: f64) -> Pass {
    let mut pass = Pass {
        mass_at_or_above_mid: 0.0,
        min_above_mid: f64::INFINITY,
        max_upto_mid: f64::NEG_INFINITY,
        min_above_lo: f64::INFINITY,
        max_upto_hi: f64::NEG_INFINITY,
    };
    for &x in w {
        if x >= mid {
            pass.mass_at_or_above_mid += x;
        }
        if x > mid {
            pass.min_above_mid = pass.min_above_mid.min(x);
        } else {
            pass.max_upto_mid = pass.max_upto_mid.max(x);
        }
        if x > lo {
            pass.min_above_lo = pass.min_above_lo.min(x);
        }
        if x <= hi {
            pass.max_upto_hi = pass.max_upto_hi.max(x);
        }
    }
    pass
}

/// Selects the tokens whose weight clears the top-p threshold of a
/// normalized weight vector.
///
/// The result keeps every token tied at the threshold, so its cardinality
/// exceeds the sort-based minimum only by the tie multiplicity.
pub fn binary_search_top_p<F: Real>(
    weights: &[F],
    cfg: &BinarySearchConfig,
) -> Result<PruneOutcome> {
    cfg.validate()?;
    if weights.is_empty() {
        return Err(Error::Empty("weights"));
    }
    let mut w = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for &v in weights {
        let x = v.as_f64();
        if !x.is_finite() {
            return Err(Error::NonFinite);
        }
        if x < 0.0 {
            return Err(Error::NotNormalized { mass: x });
        }
        total += x;
        w.push(x);
    }
    if (total - 1.0).abs() > INPUT_MASS_TOLERANCE {
        return Err(Error::NotNormalized { mass: total });
    }

    let p = cfg.p.get();
    let n = w.len();
    if reaches(0.0, p) {
        return Ok(PruneOutcome {
            selection: TokenSelection::empty(n).with_recorded_mass(0.0),
            threshold: f64::INFINITY,
            iterations: 0,
        });
    }

    let mut lo = 0.0;
    let mut hi = w.iter().copied().fold(0.0, f64::max);
    let mut iterations = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        let pass = fused_pass(&w, lo, mid, hi);
        iterations += 1;
        let (min_above_lo, max_upto_hi) = if reaches(pass.mass_at_or_above_mid, p) {
            lo = mid;
            (pass.min_above_mid, pass.max_upto_hi)
        } else {
            hi = mid;
            (pass.min_above_lo, pass.max_upto_mid)
        };
        let gap = max_upto_hi - min_above_lo;
        if gap.is_nan() || gap < cfg.epsilon || iterations >= cfg.max_iters {
            break;
        }
    }

    // `lo` itself may coincide with a weight (midpoints are dyadic fractions
    // of the maximum); drop that value when the weights strictly above it
    // already reach p.
    let strict_mass: f64 = w.iter().filter(|&&x| x > lo).sum();
    let strict = reaches(strict_mass, p);
    let keep = |x: f64| if strict { x > lo } else { x >= lo };

    let mut mask = alloc::vec![false; n];
    let mut mass = 0.0;
    let mut threshold = f64::INFINITY;
    for (i, &x) in w.iter().enumerate() {
        if keep(x) {
            mask[i] = true;
            mass += x;
            threshold = threshold.min(x);
        }
    }
    Ok(PruneOutcome {
        selection: TokenSelection::from_mask(mask).with_recorded_mass(mass),
        threshold,
        iterations,
    })
}

/// Prunes candidate-local weights (one weight per candidate, in candidate
/// order) and maps the result back to global token positions.
pub fn prune_candidates<F: Real>(
    candidate_weights: &[F],
    candidates: &TokenSelection,
    cfg: &BinarySearchConfig,
) -> Result<PruneOutcome> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if candidate_weights.len() != candidates.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            found: candidate_weights.len(),
        });
    }
    let local = binary_search_top_p(candidate_weights, cfg)?;
    let global = TokenSelection::from_indices(
        candidates.context_len(),
        local
            .selection
            .indices()
            .iter()
            .map(|&j| candidates.indices()[j]),
    )?;
    Ok(PruneOutcome {
        selection: global.with_recorded_mass(local.selection.attained_mass().unwrap_or(0.0)),
        threshold: local.threshold,
        iterations: local.iterations,
    })
}

/// Restricts full-context weight estimates to the candidates, renormalizes
/// them and keeps the top-p tokens. The recorded mass is relative to the
/// candidate set.
pub fn prune<F: Real>(
    estimate: &AttentionWeights<F>,
    candidates: &TokenSelection,
    cfg: &BinarySearchConfig,
) -> Result<PruneOutcome> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let restricted = estimate.restrict(candidates)?;
    prune_candidates(restricted.as_slice(), candidates, cfg)
}
