//! Low-bit paged key cache and the score estimator that reads it.
//!
//! Every key row is quantized asymmetrically with its own `scale` and `zero`
//! (`dequant(c) = zero + scale * c`, `zero = min(row)`,
//! `scale = (max(row) - min(row)) / (2^bits - 1)`). Codes are packed LSB
//! first: for 4-bit codes byte `b` holds `codes[2b]` in its low nibble and
//! `codes[2b + 1]` in its high nibble.

use alloc::vec::Vec;

use crate::attention::dot;
use crate::{Error, Matrix, Real, Result, TokenSelection};

/// Storage cost of one row's `QuantParams` (two `f32`).
pub const PARAMS_BYTES: usize = 8;

/// Bytes of a 16-bit full-precision key row of length `d`.
pub const fn full_precision_row_bytes(d: usize) -> usize {
    2 * d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "u32", into = "u32")
)]
pub enum QuantBits {
    Two,
    Four,
    Eight,
}

impl QuantBits {
    pub fn new(bits: u32) -> Result<Self> {
        match bits {
            2 => Ok(Self::Two),
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            other => Err(Error::UnsupportedBits(other)),
        }
    }

    #[inline]
    pub fn bits(self) -> u32 {
        match self {
            Self::Two => 2,
            Self::Four => 4,
            Self::Eight => 8,
        }
    }

    #[inline]
    pub fn max_code(self) -> u8 {
        ((1u16 << self.bits()) - 1) as u8
    }

    #[inline]
    pub fn codes_per_byte(self) -> usize {
        8 / self.bits() as usize
    }

    /// Packed bytes for a row of `d` codes.
    #[inline]
    pub fn row_bytes(self, d: usize) -> usize {
        d / self.codes_per_byte()
    }
}

impl TryFrom<u32> for QuantBits {
    type Error = Error;
    fn try_from(bits: u32) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<QuantBits> for u32 {
    fn from(b: QuantBits) -> u32 {
        b.bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuantParams {
    pub scale: f32,
    pub zero: f32,
}

impl QuantParams {
    #[inline]
    pub fn dequant(&self, code: u8) -> f64 {
        self.zero as f64 + self.scale as f64 * code as f64
    }
}

/// Quantizes one key row to `bits`-wide unsigned codes.
///
/// Codes are computed against the stored (`f32`-rounded) parameters, so the
/// reconstruction error of every element is at most `scale / 2` up to
/// rounding. A constant row stores `scale = 0` and all-zero codes.
pub fn quantize_row<F: Real>(k: &[F], bits: QuantBits) -> Result<(Vec<u8>, QuantParams)> {
    if k.is_empty() {
        return Err(Error::Empty("key row"));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in k {
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        let v = v.as_f64();
        min = min.min(v);
        max = max.max(v);
    }
    let max_code = bits.max_code();
    let params = QuantParams {
        scale: ((max - min) / max_code as f64) as f32,
        zero: min as f32,
    };
    if params.scale == 0.0 {
        return Ok((alloc::vec![0; k.len()], params));
    }
    let (zero, scale) = (params.zero as f64, params.scale as f64);
    let codes = k
        .iter()
        .map(|&v| {
            let c = libm_round((v.as_f64() - zero) / scale);
            c.clamp(0.0, max_code as f64) as u8
        })
        .collect();
    Ok((codes, params))
}

#[inline]
fn libm_round(x: f64) -> f64 {
    num_traits::Float::round(x)
}

pub fn dequantize_row(codes: &[u8], params: &QuantParams) -> Vec<f64> {
    codes.iter().map(|&c| params.dequant(c)).collect()
}

/// Packs `bits`-wide codes LSB-first, `8 / bits` codes per byte.
pub fn pack_bits(codes: &[u8], bits: QuantBits) -> Result<Vec<u8>> {
    let per_byte = bits.codes_per_byte();
    if codes.len() % per_byte != 0 {
        return Err(Error::UnalignedDimension {
            d: codes.len(),
            codes_per_byte: per_byte,
        });
    }
    let width = bits.bits();
    let max = bits.max_code();
    codes
        .chunks_exact(per_byte)
        .map(|chunk| {
            chunk.iter().enumerate().try_fold(0u8, |byte, (j, &c)| {
                if c > max {
                    return Err(Error::CodeOutOfRange {
                        code: c,
                        bits: width,
                    });
                }
                Ok(byte | (c << (j as u32 * width)))
            })
        })
        .collect()
}

pub fn unpack_bits(bytes: &[u8], d: usize, bits: QuantBits) -> Result<Vec<u8>> {
    let per_byte = bits.codes_per_byte();
    if d % per_byte != 0 {
        return Err(Error::UnalignedDimension {
            d,
            codes_per_byte: per_byte,
        });
    }
    if bytes.len() != d / per_byte {
        return Err(Error::DimensionMismatch {
            expected: d / per_byte,
            found: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(d);
    unpack_into(bytes, bits, &mut out);
    Ok(out)
}

#[inline]
fn unpack_into(bytes: &[u8], bits: QuantBits, out: &mut Vec<u8>) {
    let width = bits.bits();
    let max = bits.max_code();
    for &byte in bytes {
        for j in 0..bits.codes_per_byte() as u32 {
            out.push((byte >> (j * width)) & max);
        }
    }
}

/// Packs 4-bit codes two per byte (`codes[2b]` low nibble, `codes[2b+1]` high).
pub fn pack_codes(codes: &[u8]) -> Result<Vec<u8>> {
    pack_bits(codes, QuantBits::Four)
}

pub fn unpack_codes(bytes: &[u8], d: usize) -> Result<Vec<u8>> {
    unpack_bits(bytes, d, QuantBits::Four)
}

/// A fixed-capacity block of consecutive quantized key rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantPage {
    /// `page_size * row_bytes` bytes; rows past `valid_len` are zero.
    pub packed: Vec<u8>,
    pub params: Vec<QuantParams>,
    pub valid_len: usize,
}

/// Per-channel bounds of the full-precision keys stored in one page.
#[derive(Debug, Clone, PartialEq)]
pub struct PageMetadata {
    /// First token of the page.
    pub start: usize,
    pub len: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl PageMetadata {
    fn new(start: usize, d: usize) -> Self {
        Self {
            start,
            len: 0,
            min: alloc::vec![f64::INFINITY; d],
            max: alloc::vec![f64::NEG_INFINITY; d],
        }
    }

    fn absorb<F: Real>(&mut self, row: &[F]) {
        for ((lo, hi), &v) in self.min.iter_mut().zip(&mut self.max).zip(row) {
            let v = v.as_f64();
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
        self.len += 1;
    }

    pub fn tokens(&self) -> core::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PagedQuantKeyCache {
    pages: Vec<QuantPage>,
    /// Page ids in token order.
    page_table: Vec<usize>,
    page_size: usize,
    d: usize,
    bits: QuantBits,
    n_tokens: usize,
}

impl PagedQuantKeyCache {
    pub const DEFAULT_PAGE_SIZE: usize = 16;

    pub fn new(d: usize, page_size: usize, bits: QuantBits) -> Result<Self> {
        if page_size == 0 {
            return Err(Error::InvalidConfig("page_size must be at least 1"));
        }
        if d == 0 {
            return Err(Error::Empty("key row"));
        }
        if d % bits.codes_per_byte() != 0 {
            return Err(Error::UnalignedDimension {
                d,
                codes_per_byte: bits.codes_per_byte(),
            });
        }
        Ok(Self {
            pages: Vec::new(),
            page_table: Vec::new(),
            page_size,
            d,
            bits,
            n_tokens: 0,
        })
    }

    /// Quantizes and appends one key row, opening a new page when the last
    /// one is full.
    pub fn append<F: Real>(&mut self, k: &[F]) -> Result<()> {
        if k.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: k.len(),
            });
        }
        let (codes, params) = quantize_row(k, self.bits)?;
        let packed = pack_bits(&codes, self.bits)?;
        let needs_page = self
            .page_table
            .last()
            .map_or(true, |&id| self.pages[id].valid_len == self.page_size);
        if needs_page {
            self.page_table.push(self.pages.len());
            self.pages.push(QuantPage {
                packed: alloc::vec![0; self.page_size * self.row_bytes()],
                params: alloc::vec![QuantParams::default(); self.page_size],
                valid_len: 0,
            });
        }
        let row_bytes = self.row_bytes();
        let id = *self.page_table.last().expect("page allocated above");
        let page = &mut self.pages[id];
        let slot = page.valid_len;
        page.packed[slot * row_bytes..(slot + 1) * row_bytes].copy_from_slice(&packed);
        page.params[slot] = params;
        page.valid_len += 1;
        self.n_tokens += 1;
        Ok(())
    }

    #[inline]
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn bits(&self) -> QuantBits {
        self.bits
    }

    #[inline]
    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn pages(&self) -> &[QuantPage] {
        &self.pages
    }

    pub fn page_table(&self) -> &[usize] {
        &self.page_table
    }

    #[inline]
    pub fn row_bytes(&self) -> usize {
        self.bits.row_bytes(self.d)
    }

    /// Bytes read to estimate one token's score.
    #[inline]
    pub fn bytes_per_token(&self) -> usize {
        self.row_bytes() + PARAMS_BYTES
    }

    fn locate(&self, token: usize) -> Result<(&QuantPage, usize)> {
        if token >= self.n_tokens {
            return Err(Error::IndexOutOfRange {
                index: token,
                n: self.n_tokens,
            });
        }
        let page = &self.pages[self.page_table[token / self.page_size]];
        Ok((page, token % self.page_size))
    }

    fn packed_row(&self, token: usize) -> Result<(&[u8], QuantParams)> {
        let (page, slot) = self.locate(token)?;
        let rb = self.row_bytes();
        Ok((&page.packed[slot * rb..(slot + 1) * rb], page.params[slot]))
    }

    pub fn codes(&self, token: usize) -> Result<Vec<u8>> {
        let (bytes, _) = self.packed_row(token)?;
        unpack_bits(bytes, self.d, self.bits)
    }

    pub fn params(&self, token: usize) -> Result<QuantParams> {
        Ok(self.packed_row(token)?.1)
    }

    pub fn dequantize(&self, token: usize) -> Result<Vec<f64>> {
        let (bytes, params) = self.packed_row(token)?;
        Ok(dequantize_row(
            &unpack_bits(bytes, self.d, self.bits)?,
            &params,
        ))
    }

    /// Checks the structural invariants of the page table.
    pub fn is_consistent(&self) -> bool {
        let mut seen = alloc::vec![false; self.pages.len()];
        for &id in &self.page_table {
            if id >= seen.len() || seen[id] {
                return false;
            }
            seen[id] = true;
        }
        let filled: usize = self
            .page_table
            .iter()
            .map(|&id| self.pages[id].valid_len)
            .sum();
        let all_full_but_last = self
            .page_table
            .iter()
            .rev()
            .skip(1)
            .all(|&id| self.pages[id].valid_len == self.page_size);
        seen.iter().all(|&s| s) && filled == self.n_tokens && all_full_but_last
    }
}

/// Quantizes every key row into pages of `page_size` tokens and records the
/// full-precision per-channel bounds of each page.
pub fn build_cache<F: Real>(
    keys: &Matrix<F>,
    page_size: usize,
    bits: QuantBits,
) -> Result<(PagedQuantKeyCache, Vec<PageMetadata>)> {
    if keys.rows() == 0 {
        return Err(Error::Empty("key matrix"));
    }
    let mut cache = PagedQuantKeyCache::new(keys.cols(), page_size, bits)?;
    let mut meta: Vec<PageMetadata> = Vec::with_capacity(keys.rows().div_ceil(page_size));
    for (i, row) in keys.iter_rows().enumerate() {
        cache.append(row)?;
        if i % page_size == 0 {
            meta.push(PageMetadata::new(i, keys.cols()));
        }
        meta.last_mut().expect("pushed above").absorb(row);
    }
    Ok((cache, meta))
}

/// Per-page bounds only, for selectors that run without a quantized cache.
pub fn page_metadata<F: Real>(keys: &Matrix<F>, page_size: usize) -> Result<Vec<PageMetadata>> {
    if page_size == 0 {
        return Err(Error::InvalidConfig("page_size must be at least 1"));
    }
    if keys.rows() == 0 {
        return Err(Error::Empty("key matrix"));
    }
    let mut meta: Vec<PageMetadata> = Vec::new();
    for (i, row) in keys.iter_rows().enumerate() {
        if i % page_size == 0 {
            meta.push(PageMetadata::new(i, keys.cols()));
        }
        meta.last_mut().expect("pushed above").absorb(row);
    }
    Ok(meta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEstimate<F> {
    /// Estimated `q . k / sqrt(d)`, one per candidate in candidate order.
    pub logits: Vec<F>,
    pub bytes_touched: usize,
}

fn check_candidates(candidates: &TokenSelection, n: usize) -> Result<()> {
    match candidates.indices().last() {
        Some(&last) if last >= n => Err(Error::IndexOutOfRange { index: last, n }),
        _ => Ok(()),
    }
}

/// Gathers the quantized candidate rows, dequantizes them on the fly and
/// dots them with the query.
pub fn estimate_scores<F: Real>(
    q: &[F],
    cache: &PagedQuantKeyCache,
    candidates: &TokenSelection,
) -> Result<ScoreEstimate<F>> {
    if q.len() != cache.dim() {
        return Err(Error::DimensionMismatch {
            expected: cache.dim(),
            found: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    check_candidates(candidates, cache.n_tokens())?;
    let scale = 1.0 / num_traits::Float::sqrt(q.len() as f64);
    let mut codes = Vec::with_capacity(cache.dim());
    let mut logits = Vec::with_capacity(candidates.len());
    for &t in candidates.indices() {
        let (bytes, params) = cache.packed_row(t)?;
        codes.clear();
        unpack_into(bytes, cache.bits(), &mut codes);
        let acc = q
            .iter()
            .zip(&codes)
            .fold(0.0, |acc, (&x, &c)| acc + x.as_f64() * params.dequant(c));
        logits.push(F::from_f64(acc * scale));
    }
    Ok(ScoreEstimate {
        logits,
        bytes_touched: candidates.len() * cache.bytes_per_token(),
    })
}

/// Full-precision estimator: exact logits of the candidates, charged as
/// 16-bit key loads.
pub fn estimate_scores_exact<F: Real>(
    q: &[F],
    keys: &Matrix<F>,
    candidates: &TokenSelection,
) -> Result<ScoreEstimate<F>> {
    if q.len() != keys.cols() {
        return Err(Error::DimensionMismatch {
            expected: keys.cols(),
            found: q.len(),
        });
    }
    check_candidates(candidates, keys.rows())?;
    let scale = F::one() / F::from_f64(q.len() as f64).sqrt();
    let logits = candidates
        .indices()
        .iter()
        .map(|&t| dot(q, keys.row(t)) * scale)
        .collect();
    Ok(ScoreEstimate {
        logits,
        bytes_touched: candidates.len() * full_precision_row_bytes(keys.cols()),
    })
}
