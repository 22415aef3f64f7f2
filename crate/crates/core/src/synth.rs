//! Deterministic synthetic benchmark data: labeled Gaussian clusters and
//! a pairwise-plane rotation used as a stand-in for image rotation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::features::FeatureSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub clusters: usize,
    pub n: usize,
    pub d: usize,
    /// Euclidean distance between any two cluster means, in units of
    /// `std`.
    pub separation: f64,
    /// Per-coordinate standard deviation within a cluster.
    pub std: f64,
    /// One rotation block per angle (degrees).
    pub rotation_angles: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clusters: 3,
            n: 600,
            d: 64,
            separation: 6.0,
            std: 1.0,
            rotation_angles: Vec::new(),
            seed: 42,
        }
    }
}

/// Rotates every coordinate pair `(2t, 2t+1)` by `degrees`; an odd trailing
/// coordinate is left alone. Orthogonal, so distances are preserved.
pub fn rotate_pairs(row: &[f32], degrees: f64) -> Vec<f32> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut out = row.to_vec();
    for pair in out.chunks_exact_mut(2) {
        let (x, y) = (pair[0] as f64, pair[1] as f64);
        pair[0] = (cos * x - sin * y) as f32;
        pair[1] = (sin * x + cos * y) as f32;
    }
    out
}

/// Appends one rotated block per angle to `fs`.
pub fn add_rotations(fs: &mut FeatureSet, angles: &[f64]) -> Result<()> {
    for &angle in angles {
        let mut block = Vec::with_capacity(fs.len() * fs.dim());
        for i in 0..fs.len() {
            block.extend(rotate_pairs(fs.reference_row(i), angle));
        }
        fs.push_rotation(block)?;
    }
    Ok(())
}

/// Orthonormal directions by Gram-Schmidt on Gaussian draws.
fn orthonormal(count: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Labeled Gaussian mixture. Row `i` belongs to cluster `i % clusters`;
/// cluster means sit on orthogonal directions so every pair of means is
/// exactly `separation * std` apart.
pub fn generate(cfg: &SynthConfig) -> Result<FeatureSet> {
    if cfg.clusters == 0 || cfg.d == 0 {
        return Err(Error::invalid("clusters and d must be positive"));
    }
    if cfg.clusters > cfg.d {
        return Err(Error::invalid(format!(
            "{} clusters need d >= clusters for orthogonal means (d = {})",
            cfg.clusters, cfg.d
        )));
    }
    if !(cfg.std > 0.0 && cfg.std.is_finite() && cfg.separation >= 0.0 && cfg.separation.is_finite()) {
        return Err(Error::invalid("std must be positive and separation non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = cfg.separation * cfg.std / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = orthonormal(cfg.clusters, cfg.d, &mut rng)
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * scale).collect())
        .collect();
    let noise = Normal::new(0.0, cfg.std).expect("positive std");
    let mut block = Vec::with_capacity(cfg.n * cfg.d);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let c = i % cfg.clusters;
        labels.push(c as u32);
        for &mu in &means[c] {
            block.push((mu + noise.sample(&mut rng)) as f32);
        }
    }
    let mut fs = FeatureSet::new(cfg.n, cfg.d, vec![block], Some(labels))?;
    add_rotations(&mut fs, &cfg.rotation_angles)?;
    Ok(fs)
}

/// Seeded split into `(database, queries)` index lists, each ascending.
pub fn holdout_split(n: usize, queries: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if queries > n {
        return Err(Error::invalid(format!("cannot hold out {queries} of {n} items")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut q = order[..queries].to_vec();
    let mut db = order[queries..].to_vec();
    q.sort_unstable();
    db.sort_unstable();
    Ok((db, q))
}
