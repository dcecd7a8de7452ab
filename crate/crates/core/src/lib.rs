//! Adaptive top-p sparse attention for decode-time KV caches.
//!
//! A query selects the smallest set of cached tokens whose attention mass
//! reaches a threshold `p`. Selection is hierarchical: a conservative token
//! selector proposes `B0` candidates, a low-bit quantized copy of the key
//! cache estimates their weights, and a binary-search top-p pruner keeps the
//! `B1 <= B0` tokens that carry the requested mass.
//!
//! The crate is `no_std` (it needs `alloc`). The `std` feature only adds
//! `std::error::Error` plumbing; the `serde` feature derives serialization for
//! configuration and report types.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attention;
mod error;
mod matrix;
pub mod oracle;
pub mod pipeline;
pub mod pruner;
pub mod quant;
mod real;
pub mod selectors;
pub mod stats;

pub use attention::{
    attend, attention_weights, frobenius_norm, logits, output_error, sparse_attention,
    AttentionWeights, TokenSelection,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use oracle::{budget_curve, oracle_top_k, oracle_top_p, ThresholdP};
pub use pruner::{binary_search_top_p, prune, BinarySearchConfig, PruneOutcome};
pub use real::Real;

/// Absolute slack used whenever an accumulated mass is compared against a
/// threshold `p`. A mass `m` reaches `p` iff `m >= p - MASS_SLACK`.
pub const MASS_SLACK: f64 = 1e-9;

#[inline]
pub(crate) fn reaches(mass: f64, p: f64) -> bool {
    mass >= p - MASS_SLACK
}
