//! Feature-space similarity degree `S(i,j) = exp(-||x_i - x_j|| / (rho * d))`
//! and per-batch similarity matrices.

use crate::error::{Error, Result};

/// The positive scale `rho` of the similarity kernel (denominator `rho * d`).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RhoParam(f64);

impl RhoParam {
    pub fn new(rho: f64) -> Result<Self> {
        if rho.is_finite() && rho > 0.0 {
            Ok(RhoParam(rho))
        } else {
            Err(Error::invalid(format!("rho must be positive and finite, got {rho}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for RhoParam {
    fn default() -> Self {
        RhoParam(1.0)
    }
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let diff = x as f64 - y as f64;
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// Similarity degree of two feature vectors of dimension `d`, in `(0, 1]`.
pub fn pair_similarity(x_i: &[f32], x_j: &[f32], rho: RhoParam, d: usize) -> Result<f64> {
    for x in [x_i, x_j] {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                context: "pair_similarity",
                expected: d,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("pair_similarity"));
        }
    }
    if d == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    Ok(similarity_from_distance(euclidean(x_i, x_j), rho, d))
}

#[inline]
fn similarity_from_distance(dist: f64, rho: RhoParam, d: usize) -> f64 {
    (-dist / (rho.0 * d as f64)).exp()
}

/// Symmetric `m x m` similarity matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    m: usize,
    s: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wraps raw values, checking symmetry, the unit diagonal and the range.
    pub fn from_values(m: usize, s: Vec<f64>) -> Result<Self> {
        if s.len() != m * m {
            return Err(Error::DimensionMismatch {
                context: "similarity matrix",
                expected: m * m,
                found: s.len(),
            });
        }
        for i in 0..m {
            if s[i * m + i] != 1.0 {
                return Err(Error::invalid(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..m {
                let v = s[i * m + j];
                if !(v > 0.0 && v <= 1.0) || v != s[j * m + i] {
                    return Err(Error::invalid(format!(
                        "entry ({i},{j}) = {v} breaks symmetry or the (0,1] range"
                    )));
                }
            }
        }
        Ok(SimilarityMatrix { m, s })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.m + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }
}

/// Pairwise similarities for a batch of `m >= 2` feature rows.
pub fn batch_similarity(rows: &[&[f32]], rho: RhoParam) -> Result<SimilarityMatrix> {
    let m = rows.len();
    if m < 2 {
        return Err(Error::invalid(format!("batch similarity needs m >= 2, got {m}")));
    }
    let d = rows[0].len();
    let mut s = vec![1.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let v = pair_similarity(rows[i], rows[j], rho, d)?;
            s[i * m + j] = v;
            s[j * m + i] = v;
        }
    }
    Ok(SimilarityMatrix { m, s })
}

#[cfg(test)]
mod tests {
    use super::*;

    const E1: [f32; 4] = [1.0, 0.0, 0.0, 0.0];
    const E2: [f32; 4] = [0.0, 1.0, 0.0, 0.0];

    #[test]
    fn identical_vectors_are_fully_similar() {
        let x = [0.3f32, -2.0, 7.5];
        for rho in [0.01, 1.0, 50.0] {
            assert_eq!(pair_similarity(&x, &x, RhoParam::new(rho).unwrap(), 3).unwrap(), 1.0);
        }
    }

    #[test]
    fn orthogonal_unit_vectors() {
        // exp(-sqrt(2) / 4)
        let s = pair_similarity(&E1, &E2, RhoParam::new(1.0).unwrap(), 4).unwrap();
        assert!((s - 0.702_188_501).abs() < 1e-6, "{s}");
    }

    #[test]
    fn large_rho_approaches_one_monotonically() {
        let mut prev = 0.0;
        for rho in [0.1, 1.0, 10.0, 100.0, 1e4, 1e8] {
            let s = pair_similarity(&E1, &E2, RhoParam::new(rho).unwrap(), 4).unwrap();
            assert!(s > prev);
            prev = s;
        }
        assert!(1.0 - prev < 1e-8);
    }

    #[test]
    fn batch_examples() {
        let rows = [&E1[..], &E2[..]];
        let s = batch_similarity(&rows, RhoParam::default()).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert!((s.get(0, 1) - 0.702_188_501).abs() < 1e-6);
        assert_eq!(s.get(0, 1), s.get(1, 0));

        let same = [&E1[..], &E1[..], &E1[..]];
        let s = batch_similarity(&same, RhoParam::default()).unwrap();
        assert!(s.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn errors() {
        assert!(RhoParam::new(0.0).is_err());
        assert!(RhoParam::new(f64::NAN).is_err());
        assert!(batch_similarity(&[&E1[..]], RhoParam::default()).is_err());
        assert!(pair_similarity(&E1, &E1[..3], RhoParam::default(), 4).is_err());
        let bad = [f32::NAN, 0.0, 0.0, 0.0];
        assert!(pair_similarity(&E1, &bad, RhoParam::default(), 4).is_err());
    }
}
