#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use topp_core::{AttentionWeights, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::new(rows, cols, gaussian_vec(rng, rows * cols)).unwrap()
}

/// Softmax of standard-normal logits scaled by `1 / temperature`.
pub fn random_weights(rng: &mut impl Rng, n: usize, temperature: f64) -> AttentionWeights<f64> {
    let logits: Vec<f64> = gaussian_vec(rng, n)
        .into_iter()
        .map(|z| z / temperature)
        .collect();
    AttentionWeights::from_logits(&logits).unwrap()
}

/// Weights with forced ties: logits drawn from a small integer lattice.
pub fn tied_weights(rng: &mut impl Rng, n: usize) -> AttentionWeights<f64> {
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
    AttentionWeights::from_logits(&logits).unwrap()
}

pub fn all_distinct(w: &[f64]) -> bool {
    let mut v = w.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.windows(2).all(|p| p[0] != p[1])
}

/// Query and keys whose scaled logits equal `target / temperature`
/// exactly: each key is the logit-matching multiple of `q` plus noise
/// orthogonal to `q`.
pub fn keys_for_logits(rng: &mut impl Rng, q: &[f64], target: &[f64]) -> Matrix<f64> {
    let d = q.len();
    let qq: f64 = q.iter().map(|x| x * x).sum();
    let mut data = Vec::with_capacity(target.len() * d);
    for &t in target {
        let mut noise = gaussian_vec(rng, d);
        let proj: f64 = noise.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / qq;
        for (r, &qc) in noise.iter_mut().zip(q) {
            *r -= proj * qc;
        }
        let coef = t * (d as f64).sqrt() / qq;
        data.extend(noise.iter().zip(q).map(|(r, &qc)| r + coef * qc));
    }
    Matrix::new(target.len(), d, data).unwrap()
}

/// Exhaustive maximum mass over all subsets of exactly `b` tokens.
pub fn brute_max_mass(w: &[f64], b: usize) -> f64 {
    let n = w.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == b {
            let m: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| w[i]).sum();
            best = best.max(m);
        }
    }
    best
}

/// Exhaustive minimum cardinality of a subset reaching `p` (with the
/// crate's 1e-9 slack).
pub fn brute_min_card(w: &[f64], p: f64) -> usize {
    let n = w.len();
    let mut best = usize::MAX;
    for mask in 0u32..(1 << n) {
        let m: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| w[i]).sum();
        if m >= p - 1e-9 {
            best = best.min(mask.count_ones() as usize);
        }
    }
    best
}

/// Sort-accumulate top-p cardinality, written independently of the crate.
pub fn sort_accumulate_card(w: &[f64], p: f64) -> usize {
    let mut v = w.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    for (k, x) in v.iter().enumerate() {
        if acc >= p - 1e-9 {
            return k;
        }
        acc += x;
    }
    v.len()
}
