//! Brute-force reference selections: oracle top-k (fixed budget, maximal
//! mass) and oracle top-p (minimal budget reaching a mass threshold).
//!
//! Both sort the full weight vector. Ties are broken toward the lower token
//! index everywhere.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::{reaches, AttentionWeights, Error, Real, Result, TokenSelection};

/// Attention-mass threshold `p` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "f64", into = "f64")
)]
pub struct ThresholdP(f64);

impl ThresholdP {
    pub fn new(p: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(Error::InvalidThreshold(p))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ThresholdP {
    type Error = Error;
    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<ThresholdP> for f64 {
    fn from(p: ThresholdP) -> f64 {
        p.0
    }
}

/// Token indices by descending weight; equal weights keep ascending index.
pub fn descending_order<F: Real>(w: &[F]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    // sort_by is stable, so ties stay in index order.
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap_or(Ordering::Equal));
    order
}

/// The `budget` heaviest tokens.
pub fn oracle_top_k<F: Real>(w: &AttentionWeights<F>, budget: usize) -> Result<TokenSelection> {
    let n = w.len();
    if budget > n {
        return Err(Error::BudgetExceedsLength { budget, n });
    }
    let order = descending_order(w.as_slice());
    TokenSelection::from_indices(n, order[..budget].iter().copied())?.with_mass(w)
}

/// Number of leading entries of `order` needed to reach `p`.
fn top_p_count<F: Real>(w: &[F], order: &[usize], p: f64) -> usize {
    let mut acc = 0.0;
    for (count, &i) in order.iter().enumerate() {
        if reaches(acc, p) {
            return count;
        }
        acc += w[i].as_f64();
    }
    order.len()
}

/// The smallest selection whose mass reaches `p`, built by accumulating
/// tokens in descending weight order.
pub fn oracle_top_p<F: Real>(w: &AttentionWeights<F>, p: ThresholdP) -> TokenSelection {
    let order = descending_order(w.as_slice());
    let count = top_p_count(w.as_slice(), &order, p.get());
    let sel = TokenSelection::from_indices(w.len(), order[..count].iter().copied())
        .expect("indices come from the weight vector");
    let mass = w.mass_of(sel.indices());
    sel.with_recorded_mass(mass)
}

/// Oracle top-p budget at every threshold of an ascending grid.
pub fn budget_curve<F: Real>(
    w: &AttentionWeights<F>,
    grid: &[ThresholdP],
) -> Result<Vec<(f64, usize)>> {
    if grid.windows(2).any(|pair| pair[0] > pair[1]) {
        return Err(Error::UnsortedGrid);
    }
    let weights = w.as_slice();
    let order = descending_order(weights);
    let mut out = Vec::with_capacity(grid.len());
    let mut count = 0;
    let mut acc = 0.0;
    for &p in grid {
        while count < order.len() && !reaches(acc, p.get()) {
            acc += weights[order[count]].as_f64();
            count += 1;
        }
        out.push((p.get(), count));
    }
    Ok(out)
}
