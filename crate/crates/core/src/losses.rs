//! The four-term hashing objective and its (sub)gradients with respect to
//! the relaxed codes.
//!
//! * semantic: `sum_{i,j} |S_ij - (bt_i . bt_j + k) / 2k|` over all ordered
//!   pairs, diagonal included
//! * quantization: `alpha * sum_i || |bt_i| - 1 ||_1`
//! * information: `sum_j (mu_j - 1/2)^2`, `mu_j` the batch mean of bit `j`
//! * rotation: `sum_i sum_theta ||b_theta,i - b_i||^2`
//!
//! where `bt = 2b - 1`. Every sum runs in a fixed order so results are
//! bitwise reproducible.

use crate::error::{Error, Result};
use crate::head::CodeBatch;
use crate::similarity::SimilarityMatrix;

/// Relative weights of the four terms in the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_sem: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_sem: 1.0,
            alpha: 0.01,
            beta: 1.0,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_sem", self.w_sem),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("loss weight {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms, their weighted total and the per-bit means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
    pub total: f64,
    pub mu: Vec<f64>,
}

impl LossReport {
    /// `(name, value)` of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("j1", self.j1),
            ("j2", self.j2),
            ("j3", self.j3),
            ("j4", self.j4),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// A loss value with its gradient over the `m x k` relaxed codes.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationTerm {
    pub value: f64,
    pub grad_reference: Vec<f64>,
    /// One `m x k` gradient per rotation block.
    pub grad_rotated: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub report: LossReport,
    pub grad_reference: Vec<f64>,
    pub grad_rotated: Vec<Vec<f64>>,
}

/// `sgn` with `sgn(0) = 1` (right-hand derivative of `|x|` at the kink).
#[inline]
fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn similarity_of_recentered(bt_i: &[f64], bt_j: &[f64]) -> f64 {
    let k = bt_i.len() as f64;
    (dot(bt_i, bt_j) + k) / (2.0 * k)
}

/// Code similarity `(bt_i . bt_j + k) / 2k` of two relaxed codes.
pub fn code_similarity(b_i: &[f64], b_j: &[f64]) -> Result<f64> {
    if b_i.len() != b_j.len() {
        return Err(Error::DimensionMismatch {
            context: "code_similarity",
            expected: b_i.len(),
            found: b_j.len(),
        });
    }
    if b_i.is_empty() {
        return Err(Error::invalid("code length must be positive"));
    }
    let bt_i: Vec<f64> = b_i.iter().map(|b| 2.0 * b - 1.0).collect();
    let bt_j: Vec<f64> = b_j.iter().map(|b| 2.0 * b - 1.0).collect();
    Ok(similarity_of_recentered(&bt_i, &bt_j))
}

/// Semantic loss and its subgradient.
///
/// Both `(i,j)` and `(j,i)` carry `b_i`, and the diagonal term is quadratic
/// in `bt_i`, so for symmetric `S`:
/// `dJ/db_i = -(2/k) * sum_j sgn(S_ij - sim_ij) * bt_j` (the `j = i` term
/// included).
pub fn semantic_loss(codes: &CodeBatch, s: &SimilarityMatrix) -> Result<LossTerm> {
    let (m, k) = (codes.len(), codes.bits());
    if m < 2 {
        return Err(Error::invalid(format!("semantic loss needs m >= 2, got {m}")));
    }
    if s.size() != m {
        return Err(Error::DimensionMismatch {
            context: "similarity matrix vs batch",
            expected: m,
            found: s.size(),
        });
    }
    let scale = -2.0 / k as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; m * k];
    for i in 0..m {
        let bt_i = codes.recentered_code(i);
        let g = &mut grad[i * k..(i + 1) * k];
        for j in 0..m {
            let bt_j = codes.recentered_code(j);
            let r = s.get(i, j) - similarity_of_recentered(bt_i, bt_j);
            value += r.abs();
            let coef = scale * sgn(r);
            for (gv, &b) in g.iter_mut().zip(bt_j) {
                *gv += coef * b;
            }
        }
    }
    Ok(LossTerm { value, grad })
}

/// Per-entry quantization penalty `| |2b - 1| - 1 |` and its subgradient.
/// At the minima `b = 0` and `b = 1` the subgradient is 0; at the
/// threshold `b = 0.5` it is the right-hand derivative `-2`.
#[inline]
fn quantization_entry(b: f64) -> (f64, f64) {
    let value = ((2.0 * b - 1.0).abs() - 1.0).abs();
    let slope = if b == 0.0 || b == 1.0 {
        0.0
    } else if b < 0.0 || (0.5..1.0).contains(&b) {
        -2.0
    } else {
        2.0
    };
    (value, slope)
}

/// Quantization loss scaled by `alpha`, with its subgradient.
pub fn quantization_loss(codes: &CodeBatch, alpha: f64) -> LossTerm {
    let mut value = 0.0;
    let grad = codes
        .relaxed()
        .iter()
        .map(|&b| {
            let (v, slope) = quantization_entry(b);
            value += v;
            alpha * slope
        })
        .collect();
    LossTerm {
        value: alpha * value,
        grad,
    }
}

/// Per-bit batch means of the relaxed codes.
pub fn bit_means(codes: &CodeBatch) -> Vec<f64> {
    let (m, k) = (codes.len(), codes.bits());
    let mut mu = vec![0.0; k];
    for i in 0..m {
        for (acc, &b) in mu.iter_mut().zip(codes.code(i)) {
            *acc += b;
        }
    }
    for v in &mut mu {
        *v /= m as f64;
    }
    mu
}

/// Bit-balance loss scaled by `beta`; returns the term and the bit means.
pub fn information_loss(codes: &CodeBatch, beta: f64) -> Result<(LossTerm, Vec<f64>)> {
    let (m, k) = (codes.len(), codes.bits());
    if m == 0 {
        return Err(Error::invalid("information loss needs m >= 1"));
    }
    let mu = bit_means(codes);
    let value: f64 = mu.iter().map(|u| (u - 0.5) * (u - 0.5)).sum();
    let per_bit: Vec<f64> = mu.iter().map(|u| beta * 2.0 * (u - 0.5) / m as f64).collect();
    let mut grad = Vec::with_capacity(m * k);
    for _ in 0..m {
        grad.extend_from_slice(&per_bit);
    }
    Ok((
        LossTerm {
            value: beta * value,
            grad,
        },
        mu,
    ))
}

/// Rotation loss (squared Euclidean) scaled by `gamma`. Gradients flow to
/// the reference codes and to every rotated batch.
pub fn rotation_loss(codes: &CodeBatch, rotated: &[CodeBatch], gamma: f64) -> Result<RotationTerm> {
    if rotated.is_empty() {
        return Err(Error::NoRotations);
    }
    let (m, k) = (codes.len(), codes.bits());
    let mut value = 0.0;
    let mut grad_reference = vec![0.0; m * k];
    let mut grad_rotated = Vec::with_capacity(rotated.len());
    for rot in rotated {
        if rot.len() != m || rot.bits() != k {
            return Err(Error::DimensionMismatch {
                context: "rotated batch (index alignment)",
                expected: m * k,
                found: rot.len() * rot.bits(),
            });
        }
        let mut g = vec![0.0; m * k];
        for (idx, (&bt, &b)) in rot.relaxed().iter().zip(codes.relaxed()).enumerate() {
            let diff = bt - b;
            value += diff * diff;
            g[idx] = gamma * 2.0 * diff;
            grad_reference[idx] -= gamma * 2.0 * diff;
        }
        grad_rotated.push(g);
    }
    Ok(RotationTerm {
        value: gamma * value,
        grad_reference,
        grad_rotated,
    })
}

/// Weighted total objective. Without rotated codes the rotation term is 0.
pub fn total_loss(
    codes: &CodeBatch,
    rotated: Option<&[CodeBatch]>,
    s: &SimilarityMatrix,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    weights.validate()?;
    let sem = semantic_loss(codes, s)?;
    let quant = quantization_loss(codes, 1.0);
    let (info, mu) = information_loss(codes, 1.0)?;
    let rot = match rotated {
        Some(r) => Some(rotation_loss(codes, r, 1.0)?),
        None => None,
    };

    let mut grad_reference = vec![0.0; codes.relaxed().len()];
    for (idx, g) in grad_reference.iter_mut().enumerate() {
        *g = weights.w_sem * sem.grad[idx] + weights.alpha * quant.grad[idx] + weights.beta * info.grad[idx];
    }
    let (j4, grad_rotated) = match rot {
        Some(rot) => {
            for (g, r) in grad_reference.iter_mut().zip(&rot.grad_reference) {
                *g += weights.gamma * r;
            }
            let scaled = rot
                .grad_rotated
                .into_iter()
                .map(|g| g.into_iter().map(|v| weights.gamma * v).collect())
                .collect();
            (rot.value, scaled)
        }
        None => (0.0, Vec::new()),
    };
    let total =
        weights.w_sem * sem.value + weights.alpha * quant.value + weights.beta * info.value + weights.gamma * j4;
    Ok(TotalLoss {
        report: LossReport {
            j1: sem.value,
            j2: quant.value,
            j3: info.value,
            j4,
            total,
            mu,
        },
        grad_reference,
        grad_rotated,
    })
}
