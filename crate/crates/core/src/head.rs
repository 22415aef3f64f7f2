//! The trainable hashing head: an affine map followed by a clamp at zero,
//! producing relaxed codes `b = max(W x + c, 0)` and their recentered form
//! `2b - 1`.
//!
//! Parameters persist in a `USDW` file:
//!
//! ```text
//! "USDW" | u32 version=1 | u32 k | u32 d | k*d f64 (row-major W) | k f64 (c)
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codebook::{BinaryCodebook, BitCode};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::format::{self, Reader};
use crate::index::binarize;

pub const HEAD_MAGIC: [u8; 4] = *b"USDW";
pub const HEAD_VERSION: u32 = 1;
/// Initial offset: untrained codes sit exactly at the binarization threshold.
pub const INITIAL_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct HashHeadParams {
    bits: usize,
    dim: usize,
    /// `bits x dim`, row-major.
    weights: Vec<f64>,
    offsets: Vec<f64>,
}

impl HashHeadParams {
    pub fn from_parts(bits: usize, dim: usize, weights: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if bits == 0 || dim == 0 {
            return Err(Error::invalid("code length and input dimension must be positive"));
        }
        if weights.len() != bits * dim {
            return Err(Error::DimensionMismatch {
                context: "head weights",
                expected: bits * dim,
                found: weights.len(),
            });
        }
        if offsets.len() != bits {
            return Err(Error::DimensionMismatch {
                context: "head offsets",
                expected: bits,
                found: offsets.len(),
            });
        }
        if weights.iter().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("head parameters"));
        }
        Ok(HashHeadParams {
            bits,
            dim,
            weights,
            offsets,
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn offsets_mut(&mut self) -> &mut [f64] {
        &mut self.offsets
    }

    /// Number of scalar parameters (`k*d + k`).
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.offsets.len()
    }

    /// Flat view `[W row-major..., c...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.extend_from_slice(&self.offsets);
        v
    }

    pub fn from_flat(bits: usize, dim: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != bits * dim + bits {
            return Err(Error::DimensionMismatch {
                context: "flat head parameters",
                expected: bits * dim + bits,
                found: flat.len(),
            });
        }
        let (w, c) = flat.split_at(bits * dim);
        Self::from_parts(bits, dim, w.to_vec(), c.to_vec())
    }

    fn check_rows(&self, rows: &[&[f32]]) -> Result<()> {
        if let Some(bad) = rows.iter().find(|r| r.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                context: "head input",
                expected: self.dim,
                found: bad.len(),
            });
        }
        Ok(())
    }

    /// Relaxed codes for a batch of feature rows.
    pub fn forward(&self, rows: &[&[f32]]) -> Result<CodeBatch> {
        self.check_rows(rows)?;
        let (m, k) = (rows.len(), self.bits);
        let mut z = Vec::with_capacity(m * k);
        for row in rows {
            for j in 0..k {
                let w = &self.weights[j * self.dim..(j + 1) * self.dim];
                let dot: f64 = w.iter().zip(row.iter()).map(|(&a, &x)| a * x as f64).sum();
                z.push(dot + self.offsets[j]);
            }
        }
        Ok(CodeBatch::from_preactivations(m, k, z))
    }

    /// Gradients of a scalar loss with respect to `W` and `c`, given the
    /// loss gradient with respect to the relaxed codes of `codes`. Gradients
    /// are summed over the batch. The clamp's derivative is 1 where `z > 0`
    /// and 0 elsewhere (including `z = 0`).
    pub fn backward(&self, rows: &[&[f32]], codes: &CodeBatch, grad_codes: &[f64]) -> Result<HeadGradient> {
        self.check_rows(rows)?;
        let z = codes.preactivations().ok_or(Error::MissingActivations)?;
        let (m, k) = (codes.len(), codes.bits());
        if rows.len() != m || k != self.bits {
            return Err(Error::DimensionMismatch {
                context: "backward batch",
                expected: m,
                found: rows.len(),
            });
        }
        if grad_codes.len() != m * k {
            return Err(Error::DimensionMismatch {
                context: "backward gradient",
                expected: m * k,
                found: grad_codes.len(),
            });
        }
        if grad_codes.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteInput("backward gradient"));
        }
        let mut grad = HeadGradient::zeros(k, self.dim);
        grad.accumulate(rows, z, grad_codes);
        Ok(grad)
    }

    /// Binary codes for every row of one block of a feature set; ids are
    /// row indices.
    pub fn encode(&self, fs: &FeatureSet, block: usize) -> Result<BinaryCodebook> {
        if fs.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "encode features",
                expected: self.dim,
                found: fs.dim(),
            });
        }
        if block > fs.rotations() {
            return Err(Error::invalid(format!(
                "block {block} requested but the feature set has {} rotation blocks",
                fs.rotations()
            )));
        }
        let mut codes = Vec::with_capacity(fs.len());
        for i in 0..fs.len() {
            codes.push(self.encode_row(fs.row(block, i))?);
        }
        let ids: Vec<u64> = (0..fs.len() as u64).collect();
        BinaryCodebook::from_codes(&codes, &ids).map(|cb| {
            if cb.is_empty() {
                BinaryCodebook::new(self.bits)
            } else {
                cb
            }
        })
    }

    pub fn encode_row(&self, row: &[f32]) -> Result<BitCode> {
        let batch = self.forward(&[row])?;
        binarize(batch.code(0))
    }
}

/// `W` and `c` gradients, same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl HeadGradient {
    pub fn zeros(bits: usize, dim: usize) -> Self {
        HeadGradient {
            weights: vec![0.0; bits * dim],
            offsets: vec![0.0; bits],
        }
    }

    pub(crate) fn accumulate(&mut self, rows: &[&[f32]], z: &[f64], grad_codes: &[f64]) {
        let k = self.offsets.len();
        let d = self.weights.len() / k.max(1);
        for (i, row) in rows.iter().enumerate() {
            for j in 0..k {
                if z[i * k + j] <= 0.0 {
                    continue;
                }
                let g = grad_codes[i * k + j];
                if g == 0.0 {
                    continue;
                }
                self.offsets[j] += g;
                let w = &mut self.weights[j * d..(j + 1) * d];
                for (wj, &x) in w.iter_mut().zip(row.iter()) {
                    *wj += g * x as f64;
                }
            }
        }
    }

    pub fn add(&mut self, other: &HeadGradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.offsets.iter_mut().zip(&other.offsets) {
            *a += b;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.extend_from_slice(&self.offsets);
        v
    }
}

/// A batch of relaxed codes (`m x k`), their recentered form `2b - 1`
/// and, when produced by a head, the pre-activations the backward pass
/// needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBatch {
    m: usize,
    k: usize,
    b: Vec<f64>,
    b_tilde: Vec<f64>,
    z: Option<Vec<f64>>,
}

impl CodeBatch {
    fn from_preactivations(m: usize, k: usize, z: Vec<f64>) -> Self {
        let b: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        let b_tilde = b.iter().map(|&v| 2.0 * v - 1.0).collect();
        CodeBatch {
            m,
            k,
            b,
            b_tilde,
            z: Some(z),
        }
    }

    /// Wraps relaxed codes directly (no head, so no backward pass).
    pub fn from_relaxed(m: usize, k: usize, b: Vec<f64>) -> Result<Self> {
        if b.len() != m * k {
            return Err(Error::DimensionMismatch {
                context: "relaxed codes",
                expected: m * k,
                found: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("relaxed codes must be finite and non-negative"));
        }
        let b_tilde = b.iter().map(|&v| 2.0 * v - 1.0).collect();
        Ok(CodeBatch {
            m,
            k,
            b,
            b_tilde,
            z: None,
        })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn bits(&self) -> usize {
        self.k
    }

    pub fn relaxed(&self) -> &[f64] {
        &self.b
    }

    pub fn recentered(&self) -> &[f64] {
        &self.b_tilde
    }

    pub fn preactivations(&self) -> Option<&[f64]> {
        self.z.as_deref()
    }

    pub fn code(&self, i: usize) -> &[f64] {
        &self.b[i * self.k..(i + 1) * self.k]
    }

    pub fn recentered_code(&self, i: usize) -> &[f64] {
        &self.b_tilde[i * self.k..(i + 1) * self.k]
    }
}

/// Deterministic initialization: `W ~ N(0, 2/d)`, `c = 0.5`.
pub fn init_head(bits: usize, dim: usize, seed: u64) -> Result<HashHeadParams> {
    if bits == 0 || dim == 0 {
        return Err(Error::invalid("code length and input dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (2.0 / dim as f64).sqrt()).expect("valid std");
    let weights = (0..bits * dim).map(|_| normal.sample(&mut rng)).collect();
    HashHeadParams::from_parts(bits, dim, weights, vec![INITIAL_OFFSET; bits])
}

pub fn encode_head(params: &HashHeadParams) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * params.num_params());
    out.extend_from_slice(&HEAD_MAGIC);
    format::put_u32(&mut out, HEAD_VERSION);
    format::put_u32(&mut out, format::header_u32("k", 8, params.bits)?);
    format::put_u32(&mut out, format::header_u32("d", 12, params.dim)?);
    for v in params.weights.iter().chain(&params.offsets) {
        format::put_u64(&mut out, v.to_bits());
    }
    Ok(out)
}

pub fn decode_head(bytes: &[u8]) -> Result<HashHeadParams> {
    let mut r = Reader::new(bytes);
    r.magic(&HEAD_MAGIC)?;
    r.version(HEAD_VERSION)?;
    let bits = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let count = bits as u64 * dim as u64 + bits as u64;
    r.require(count * 8)?;
    let mut flat = Vec::with_capacity(count as usize);
    for _ in 0..count {
        flat.push(r.f64()?);
    }
    r.finish()?;
    HashHeadParams::from_flat(bits, dim, &flat)
}

pub fn read_head(path: impl AsRef<Path>) -> Result<HashHeadParams> {
    decode_head(&format::read_file(path.as_ref())?)
}

pub fn write_head(params: &HashHeadParams, path: impl AsRef<Path>) -> Result<()> {
    format::write_file(path.as_ref(), &encode_head(params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_head(16, 10, 3).unwrap(), init_head(16, 10, 3).unwrap());
        assert_ne!(init_head(16, 10, 3).unwrap(), init_head(16, 10, 4).unwrap());
        assert!(init_head(0, 10, 3).is_err());
        assert!(init_head(4, 0, 3).is_err());
    }

    #[test]
    fn zero_input_sits_at_threshold() {
        let head = init_head(8, 5, 1).unwrap();
        let x = [0.0f32; 5];
        let codes = head.forward(&[&x]).unwrap();
        assert!(codes.relaxed().iter().all(|&b| b == 0.5));
        assert!(codes.recentered().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn weight_scale_matches_he_init() {
        let head = init_head(32, 64, 7).unwrap();
        let w = head.weights();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = (2.0f64 / 64.0).sqrt();
        let ratio = var.sqrt() / target;
        assert!((0.8..=1.2).contains(&ratio), "std ratio {ratio}");
    }

    #[test]
    fn forward_constant_offsets() {
        let head = HashHeadParams::from_parts(3, 2, vec![0.0; 6], vec![1.0; 3]).unwrap();
        let x = [4.0f32, -9.0];
        let codes = head.forward(&[&x, &x]).unwrap();
        assert!(codes.relaxed().iter().all(|&b| b == 1.0));
        assert!(codes.recentered().iter().all(|&b| b == 1.0));
    }

    #[test]
    fn forward_clamps_negative_preactivations() {
        let head = HashHeadParams::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2]).unwrap();
        let codes = head.forward(&[&[-3.0f32, 2.0][..]]).unwrap();
        assert_eq!(codes.relaxed(), &[0.0, 2.0]);
        assert_eq!(codes.recentered(), &[-1.0, 3.0]);
        assert_eq!(codes.preactivations().unwrap(), &[-3.0, 2.0]);
    }

    #[test]
    fn backward_zero_cases() {
        let head = init_head(4, 3, 9).unwrap();
        let x = [1.0f32, 2.0, 3.0];
        let codes = head.forward(&[&x]).unwrap();
        let g = head.backward(&[&x], &codes, &[0.0; 4]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));

        let dead = HashHeadParams::from_parts(4, 3, vec![0.0; 12], vec![-1.0; 4]).unwrap();
        let codes = dead.forward(&[&x]).unwrap();
        let g = dead.backward(&[&x], &codes, &[5.0, -2.0, 1.0, 3.0]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_needs_activations() {
        let head = init_head(2, 1, 0).unwrap();
        let codes = CodeBatch::from_relaxed(1, 2, vec![0.2, 0.9]).unwrap();
        assert!(matches!(
            head.backward(&[&[1.0f32][..]], &codes, &[1.0, 1.0]),
            Err(Error::MissingActivations)
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let head = init_head(2, 3, 0).unwrap();
        assert!(head.forward(&[&[1.0f32, 2.0][..]]).is_err());
    }

    #[test]
    fn head_file_round_trip() {
        let head = init_head(5, 7, 11).unwrap();
        let bytes = encode_head(&head).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * (5 * 7 + 5));
        assert_eq!(decode_head(&bytes).unwrap(), head);
        assert!(matches!(
            decode_head(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn encode_all_ones_head() {
        let head = HashHeadParams::from_parts(4, 2, vec![0.0; 8], vec![1.0; 4]).unwrap();
        let fs = FeatureSet::from_rows(&[vec![1.0, 2.0], vec![-5.0, 0.5]], None).unwrap();
        let cb = head.encode(&fs, 0).unwrap();
        assert_eq!(cb.len(), 2);
        for (_, code) in cb.iter() {
            assert_eq!(code.count_ones(), 4);
        }
        let wrong = FeatureSet::from_rows(&[vec![1.0, 2.0, 3.0]], None).unwrap();
        assert!(head.encode(&wrong, 0).is_err());
    }
}
