//! Analytic load-count model of select-then-prune decoding.
//!
//! One unit is one full-precision key/value token row. The selector's
//! estimation pass is charged `selector_fraction` per context token, the
//! quantized estimator `bits / 16` per candidate and sparse attention one
//! unit per final token. The top-p search itself is not charged.

use crate::{Error, Result};

pub const DEFAULT_SELECTOR_FRACTION: f64 = 1.0 / 16.0;
pub const DEFAULT_ESTIMATOR_FRACTION: f64 = 1.0 / 4.0;

/// Token loads charged for one pruned head.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CostTerms {
    pub selector_tokens: usize,
    pub estimator_tokens: usize,
    pub attention_tokens: usize,
    pub selector_fraction: f64,
    pub estimator_fraction: f64,
}

impl CostTerms {
    pub fn selector_units(&self) -> f64 {
        self.selector_tokens as f64 * self.selector_fraction
    }

    pub fn estimator_units(&self) -> f64 {
        self.estimator_tokens as f64 * self.estimator_fraction
    }

    /// Selector, estimator and final sparse attention.
    pub fn pruned_units(&self) -> f64 {
        self.selector_units() + self.estimator_units() + self.attention_tokens as f64
    }

    /// The same selector attending to all of its candidates, no pruner.
    pub fn baseline_units(&self) -> f64 {
        self.selector_units() + self.estimator_tokens as f64
    }

    pub fn speedup(&self) -> f64 {
        self.baseline_units() / self.pruned_units()
    }
}

/// `(N f_s + B0) / (N f_s + B0 f_e + B1)`.
pub fn model_speedup(
    n: usize,
    b0: usize,
    b1: usize,
    selector_fraction: f64,
    estimator_fraction: f64,
) -> Result<f64> {
    if b1 > b0 || b0 > n {
        return Err(Error::InvalidConfig("speedup model needs B1 <= B0 <= N"));
    }
    let num = n as f64 * selector_fraction + b0 as f64;
    let den = n as f64 * selector_fraction + b0 as f64 * estimator_fraction + b1 as f64;
    if den == 0.0 {
        return Err(Error::InvalidConfig("speedup model has a zero denominator"));
    }
    Ok(num / den)
}

/// [`model_speedup`] with the default 1/16 selector and INT4 (1/4) estimator
/// fractions, as a reduced fraction `(numerator, denominator)`.
pub fn model_speedup_ratio(n: u64, b0: u64, b1: u64) -> Result<(u64, u64)> {
    if b1 > b0 || b0 > n {
        return Err(Error::InvalidConfig("speedup model needs B1 <= B0 <= N"));
    }
    // Scale numerator and denominator by 16.
    let num = n + 16 * b0;
    let den = n + 4 * b0 + 16 * b1;
    if den == 0 {
        return Err(Error::InvalidConfig("speedup model has a zero denominator"));
    }
    let g = gcd(num, den);
    Ok((num / g, den / g))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Extra memory of a `bits`-wide key-only cache relative to a 16-bit K+V
/// cache.
pub fn memory_overhead(bits: u32) -> Result<f64> {
    match bits {
        2 | 4 | 8 => Ok(bits as f64 / 16.0 * 0.5),
        other => Err(Error::UnsupportedBits(other)),
    }
}
