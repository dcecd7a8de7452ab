//! Exact decode attention, sparse attention under an index set, and the
//! output-error metrics that bound it.

use alloc::vec::Vec;

use crate::{Error, Matrix, Real, Result};

/// Tolerance on `|sum(w) - 1|` accepted by [`AttentionWeights::new`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// One row of softmax attention weights over `n` context tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<F> {
    w: Vec<F>,
}

impl<F: Real> AttentionWeights<F> {
    /// Wraps an already normalized weight vector.
    pub fn new(w: Vec<F>) -> Result<Self> {
        Self::with_tolerance(w, NORMALIZATION_TOLERANCE)
    }

    pub(crate) fn with_tolerance(w: Vec<F>, tol: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Empty("attention weights"));
        }
        let mut mass = 0.0;
        for &v in &w {
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            if v < F::zero() {
                return Err(Error::NotNormalized { mass: v.as_f64() });
            }
            mass += v.as_f64();
        }
        if (mass - 1.0).abs() > tol {
            return Err(Error::NotNormalized { mass });
        }
        Ok(Self { w })
    }

    /// Numerically stable softmax: the maximum logit is subtracted before
    /// exponentiation.
    pub fn from_logits(logits: &[F]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Empty("logits"));
        }
        let mut max = F::neg_infinity();
        for &l in logits {
            if !l.is_finite() {
                return Err(Error::NonFinite);
            }
            max = max.max(l);
        }
        let mut w: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum = w.iter().fold(F::zero(), |acc, &v| acc + v);
        for v in &mut w {
            *v = *v / sum;
        }
        Ok(Self { w })
    }

    /// Uniform weights over `n` tokens.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("attention weights"));
        }
        let v = F::one() / F::from_f64(n as f64);
        Ok(Self {
            w: alloc::vec![v; n],
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.w.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[F] {
        &self.w
    }

    pub fn into_vec(self) -> Vec<F> {
        self.w
    }

    /// Sum of the weights at `indices`, accumulated in `f64`.
    pub fn mass_of(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.w[i].as_f64()).sum()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        crate::stats::entropy(self.w.iter().map(|v| v.as_f64()))
    }

    /// Weights of the selected tokens, renormalized to sum to one, in
    /// selection order.
    pub fn restrict(&self, sel: &TokenSelection) -> Result<Self> {
        sel.check_len(self.len())?;
        let total: F = sel
            .indices()
            .iter()
            .fold(F::zero(), |acc, &i| acc + self.w[i]);
        if sel.is_empty() || total <= F::zero() {
            return Err(Error::DegenerateSelection);
        }
        Ok(Self {
            w: sel.indices().iter().map(|&i| self.w[i] / total).collect(),
        })
    }
}

/// An index set over `n` tokens, stored both as a sorted index list and as a
/// dense mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSelection {
    indices: Vec<usize>,
    mask: Vec<bool>,
    attained_mass: Option<f64>,
}

impl TokenSelection {
    /// Builds a selection from arbitrary-order indices; duplicates collapse.
    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = alloc::vec![false; n];
        for i in indices {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            mask[i] = true;
        }
        Ok(Self::from_mask(mask))
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        let indices = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        Self {
            indices,
            mask,
            attained_mass: None,
        }
    }

    pub fn all(n: usize) -> Self {
        Self::from_mask(alloc::vec![true; n])
    }

    pub fn empty(n: usize) -> Self {
        Self::from_mask(alloc::vec![false; n])
    }

    /// Records the mass of this selection under `w`.
    pub fn with_mass<F: Real>(mut self, w: &AttentionWeights<F>) -> Result<Self> {
        self.attained_mass = Some(self.mass_under(w)?);
        Ok(self)
    }

    pub(crate) fn with_recorded_mass(mut self, mass: f64) -> Self {
        self.attained_mass = Some(mass);
        self
    }

    pub fn mass_under<F: Real>(&self, w: &AttentionWeights<F>) -> Result<f64> {
        self.check_len(w.len())?;
        Ok(w.mass_of(&self.indices))
    }

    /// Mass recorded by the producer of this selection, if any.
    pub fn attained_mass(&self) -> Option<f64> {
        self.attained_mass
    }

    /// Context length `n` this selection ranges over.
    #[inline]
    pub fn context_len(&self) -> usize {
        self.mask.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.mask.get(i).copied().unwrap_or(false)
    }

    pub fn is_subset_of(&self, other: &TokenSelection) -> bool {
        self.context_len() == other.context_len() && self.indices.iter().all(|&i| other.mask[i])
    }

    pub fn union(&self, other: &TokenSelection) -> Result<Self> {
        other.check_len(self.context_len())?;
        let mask = self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(&a, &b)| a || b)
            .collect();
        Ok(Self::from_mask(mask))
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.context_len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.context_len(),
            });
        }
        Ok(())
    }
}

fn check_finite<F: Real>(v: &[F]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Scaled dot products `q . k_i / sqrt(d)` for every key row.
pub fn logits<F: Real>(q: &[F], keys: &Matrix<F>) -> Result<Vec<F>> {
    if keys.rows() == 0 {
        return Err(Error::Empty("key matrix"));
    }
    if q.len() != keys.cols() {
        return Err(Error::DimensionMismatch {
            expected: keys.cols(),
            found: q.len(),
        });
    }
    check_finite(q)?;
    if !keys.is_finite() {
        return Err(Error::NonFinite);
    }
    let scale = F::one() / F::from_f64(q.len() as f64).sqrt();
    Ok(keys.iter_rows().map(|k| dot(q, k) * scale).collect())
}

/// `softmax(q . K^T / sqrt(d))`.
pub fn attention_weights<F: Real>(q: &[F], keys: &Matrix<F>) -> Result<AttentionWeights<F>> {
    AttentionWeights::from_logits(&logits(q, keys)?)
}

fn check_values<F: Real>(w: &AttentionWeights<F>, values: &Matrix<F>) -> Result<()> {
    if values.rows() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            found: values.rows(),
        });
    }
    if !values.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Dense attention output `W V`.
pub fn attend<F: Real>(w: &AttentionWeights<F>, values: &Matrix<F>) -> Result<Vec<F>> {
    check_values(w, values)?;
    let mut out = alloc::vec![F::zero(); values.cols()];
    for (&wi, row) in w.as_slice().iter().zip(values.iter_rows()) {
        axpy(&mut out, wi, row);
    }
    Ok(out)
}

#[inline]
fn axpy<F: Real>(acc: &mut [F], a: F, x: &[F]) {
    for (o, &v) in acc.iter_mut().zip(x) {
        *o = *o + a * v;
    }
}

/// Sparse attention `W Λ V` over the selected tokens.
///
/// With `renormalize` the output is divided by the selection's mass, which is
/// what a kernel running softmax over the subset computes. An empty or
/// massless selection then has no defined output and is rejected; without
/// renormalization it yields the zero vector.
pub fn sparse_attention<F: Real>(
    w: &AttentionWeights<F>,
    values: &Matrix<F>,
    sel: &TokenSelection,
    renormalize: bool,
) -> Result<Vec<F>> {
    check_values(w, values)?;
    sel.check_len(w.len())?;
    let weights = w.as_slice();
    let mut out = alloc::vec![F::zero(); values.cols()];
    let mut mass = F::zero();
    for &i in sel.indices() {
        axpy(&mut out, weights[i], values.row(i));
        mass = mass + weights[i];
    }
    if renormalize {
        if mass <= F::zero() {
            return Err(Error::DegenerateSelection);
        }
        for o in &mut out {
            *o = *o / mass;
        }
    }
    Ok(out)
}

/// Euclidean distance between a reference and an approximate output.
pub fn output_error<F: Real>(o: &[F], approx: &[F]) -> Result<F> {
    if o.len() != approx.len() {
        return Err(Error::DimensionMismatch {
            expected: o.len(),
            found: approx.len(),
        });
    }
    let sq = o
        .iter()
        .zip(approx)
        .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(sq.sqrt())
}

pub fn frobenius_norm<F: Real>(values: &Matrix<F>) -> Result<F> {
    if !values.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(values
        .as_slice()
        .iter()
        .fold(F::zero(), |acc, &v| acc + v * v)
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn orthogonal_query_gives_uniform_weights() {
        let k = mat(&[&[0.0, 1.0], &[0.0, -2.0], &[0.0, 3.0], &[0.0, 0.5]]);
        let w = attention_weights(&[1.0, 0.0], &k).unwrap();
        assert_eq!(w.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn single_token_has_unit_weight() {
        let w = attention_weights(&[0.3, -1.0], &mat(&[&[7.0, 2.0]])).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let k = mat(&[&[1.0, 2.0]]);
        assert!(matches!(
            attention_weights(&[1.0], &k),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(
            attention_weights(&[f64::NAN, 1.0], &k),
            Err(Error::NonFinite)
        );
        let bad = mat(&[&[f64::INFINITY, 2.0]]);
        assert_eq!(attention_weights(&[1.0, 1.0], &bad), Err(Error::NonFinite));
    }

    #[test]
    fn full_selection_matches_dense_output() {
        let k = mat(&[&[0.1, 0.4], &[1.0, -0.3], &[-0.7, 0.2]]);
        let v = mat(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.5]]);
        let w = attention_weights(&[0.9, 0.2], &k).unwrap();
        let full = attend(&w, &v).unwrap();
        let sel = TokenSelection::all(3);
        assert_eq!(sparse_attention(&w, &v, &sel, false).unwrap(), full);
        let renorm = sparse_attention(&w, &v, &sel, true).unwrap();
        for (a, b) in renorm.iter().zip(&full) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_index_is_one_weighted_row() {
        let w = AttentionWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let v = mat(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.5]]);
        let sel = TokenSelection::from_indices(3, [1]).unwrap();
        assert_eq!(
            sparse_attention(&w, &v, &sel, false).unwrap(),
            vec![1.5, -0.5]
        );
    }

    #[test]
    fn empty_selection_behaviour_depends_on_renormalization() {
        let w = AttentionWeights::<f64>::uniform(2).unwrap();
        let v = mat(&[&[1.0], &[2.0]]);
        let sel = TokenSelection::empty(2);
        assert_eq!(sparse_attention(&w, &v, &sel, false).unwrap(), vec![0.0]);
        assert_eq!(
            sparse_attention(&w, &v, &sel, true),
            Err(Error::DegenerateSelection)
        );
    }

    #[test]
    fn output_error_on_basis_vectors() {
        assert_eq!(output_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let e = output_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((e - 2f64.sqrt()).abs() < 1e-15);
        assert!(output_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn frobenius_norm_of_small_matrices() {
        assert_eq!(frobenius_norm(&Matrix::<f64>::zeros(3, 2)).unwrap(), 0.0);
        let id = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((frobenius_norm(&id).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_weights() {
        assert!(matches!(
            AttentionWeights::new(vec![0.5, 0.4]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(AttentionWeights::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn selection_mask_mirrors_indices() {
        let sel = TokenSelection::from_indices(6, [4, 1, 4, 0]).unwrap();
        assert_eq!(sel.indices(), &[0, 1, 4]);
        assert_eq!(sel.mask(), &[true, true, false, false, true, false]);
        assert!(TokenSelection::from_indices(3, [3]).is_err());
    }

    #[test]
    fn restrict_renormalizes() {
        let w = AttentionWeights::new(vec![0.1f64, 0.3, 0.6]).unwrap();
        let sel = TokenSelection::from_indices(3, [0, 1]).unwrap();
        let r = w.restrict(&sel).unwrap();
        assert!((r.as_slice()[0] - 0.25).abs() < 1e-15);
        assert!((r.as_slice()[1] - 0.75).abs() < 1e-15);
    }
}
