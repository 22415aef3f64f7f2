//! Central-difference gradient checking for the loss terms and for the
//! full head + objective composition.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::head::{init_head, CodeBatch, HashHeadParams};
use crate::index::THRESHOLD;
use crate::losses::{information_loss, quantization_loss, rotation_loss, semantic_loss, total_loss, LossWeights};
use crate::similarity::{batch_similarity, RhoParam, SimilarityMatrix};

/// Minimum distance from any non-differentiable point required of a
/// checked instance.
pub const KINK_MARGIN: f64 = 1e-6;
/// Margin used when sampling, wide enough that no finite-difference probe
/// crosses a kink.
const SAMPLE_MARGIN: f64 = 1e-3;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossSelector {
    Semantic,
    Quantization,
    Information,
    Rotation,
    /// Weighted total objective with respect to the relaxed codes.
    Total,
    /// Total objective composed with the head, with respect to `W` and `c`.
    Head,
}

impl LossSelector {
    pub const ALL: [LossSelector; 6] = [
        LossSelector::Semantic,
        LossSelector::Quantization,
        LossSelector::Information,
        LossSelector::Rotation,
        LossSelector::Total,
        LossSelector::Head,
    ];

    /// Smooth terms are held to the tighter tolerance.
    pub fn is_smooth(self) -> bool {
        matches!(self, LossSelector::Information | LossSelector::Rotation)
    }

    pub fn tolerance(self) -> f64 {
        if self.is_smooth() {
            1e-6
        } else {
            1e-4
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossSelector::Semantic => "j1",
            LossSelector::Quantization => "j2",
            LossSelector::Information => "j3",
            LossSelector::Rotation => "j4",
            LossSelector::Total => "total",
            LossSelector::Head => "head",
        }
    }
}

impl fmt::Display for LossSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "j1" | "semantic" => LossSelector::Semantic,
            "j2" | "quantization" => LossSelector::Quantization,
            "j3" | "information" => LossSelector::Information,
            "j4" | "rotation" => LossSelector::Rotation,
            "total" => LossSelector::Total,
            "head" => LossSelector::Head,
            other => return Err(Error::invalid(format!("unknown loss {other:?}"))),
        })
    }
}

/// A small randomized problem: `m` feature rows, `R` rotated copies, a
/// head, relaxed codes (used directly by the code-level checks) and the
/// batch similarity matrix.
#[derive(Debug, Clone)]
pub struct Instance {
    pub m: usize,
    pub k: usize,
    pub features: Vec<Vec<f32>>,
    pub rotated_features: Vec<Vec<Vec<f32>>>,
    pub head: HashHeadParams,
    pub codes: Vec<f64>,
    pub rotated_codes: Vec<Vec<f64>>,
    pub similarity: SimilarityMatrix,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], epsilon: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + epsilon;
            let plus = f(&probe);
            probe[i] = x[i] - epsilon;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * epsilon)
        })
        .collect()
}

/// Per-coordinate comparison of two gradients.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradcheckReport {
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        coordinates: analytic.len(),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_coordinate = i;
        }
    }
    report
}

fn batch(m: usize, k: usize, b: &[f64]) -> CodeBatch {
    // probes may dip a hair below zero; the losses are defined there too
    CodeBatch::from_relaxed(m, k, b.iter().map(|v| v.max(0.0)).collect()).expect("shape")
}

fn semantic_kinks(codes: &CodeBatch, s: &SimilarityMatrix, margin: f64) -> Result<()> {
    let (m, k) = (codes.len(), codes.bits() as f64);
    for i in 0..m {
        for j in 0..m {
            let bi = codes.recentered_code(i);
            let bj = codes.recentered_code(j);
            let sim = (bi.iter().zip(bj).map(|(a, b)| a * b).sum::<f64>() + k) / (2.0 * k);
            if (s.get(i, j) - sim).abs() <= margin {
                return Err(Error::KinkViolation(format!(
                    "semantic residual ({i},{j}) within {margin}"
                )));
            }
        }
    }
    Ok(())
}

fn quantization_kinks(values: &[f64], margin: f64) -> Result<()> {
    for (idx, &b) in values.iter().enumerate() {
        for kink in [0.0, THRESHOLD, 1.0] {
            if (b - kink).abs() <= margin {
                return Err(Error::KinkViolation(format!("code entry {idx} = {b} near {kink}")));
            }
        }
    }
    Ok(())
}

fn head_codes(inst: &Instance, head: &HashHeadParams) -> Result<(CodeBatch, Vec<CodeBatch>)> {
    let rows: Vec<&[f32]> = inst.features.iter().map(Vec::as_slice).collect();
    let codes = head.forward(&rows)?;
    let rotated = inst
        .rotated_features
        .iter()
        .map(|block| {
            let r: Vec<&[f32]> = block.iter().map(Vec::as_slice).collect();
            head.forward(&r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((codes, rotated))
}

/// Fails with [`Error::KinkViolation`] when any non-differentiable point
/// of the selected objective lies within `margin`.
pub fn check_kinks(selector: LossSelector, inst: &Instance, margin: f64) -> Result<()> {
    let codes = batch(inst.m, inst.k, &inst.codes);
    match selector {
        LossSelector::Semantic => semantic_kinks(&codes, &inst.similarity, margin),
        LossSelector::Quantization => quantization_kinks(&inst.codes, margin),
        LossSelector::Information | LossSelector::Rotation => Ok(()),
        LossSelector::Total => {
            semantic_kinks(&codes, &inst.similarity, margin)?;
            quantization_kinks(&inst.codes, margin)
        }
        LossSelector::Head => {
            let (codes, rotated) = head_codes(inst, &inst.head)?;
            for cb in std::iter::once(&codes).chain(&rotated) {
                let z = cb.preactivations().expect("head output");
                if let Some(idx) = z.iter().position(|v| v.abs() <= margin) {
                    return Err(Error::KinkViolation(format!(
                        "pre-activation {idx} within {margin} of 0"
                    )));
                }
                let active: Vec<f64> = cb.relaxed().iter().copied().filter(|&b| b > 0.0).collect();
                quantization_kinks(&active, margin)?;
            }
            semantic_kinks(&codes, &inst.similarity, margin)
        }
    }
}

/// Checks the analytic gradient of the selected objective against central
/// differences with step `epsilon`.
pub fn gradcheck(selector: LossSelector, inst: &Instance, epsilon: f64) -> Result<GradcheckReport> {
    check_kinks(selector, inst, KINK_MARGIN)?;
    let (m, k) = (inst.m, inst.k);
    let mk = m * k;
    let codes_and_rotated = || {
        let mut x = inst.codes.clone();
        for r in &inst.rotated_codes {
            x.extend_from_slice(r);
        }
        x
    };
    let split = |x: &[f64]| -> (CodeBatch, Vec<CodeBatch>) {
        let reference = batch(m, k, &x[..mk]);
        let rotated = x[mk..].chunks(mk).map(|c| batch(m, k, c)).collect();
        (reference, rotated)
    };

    let (x, analytic, numeric) = match selector {
        LossSelector::Semantic => {
            let x = inst.codes.clone();
            let f = |x: &[f64]| semantic_loss(&batch(m, k, x), &inst.similarity).expect("shape").value;
            let a = semantic_loss(&batch(m, k, &x), &inst.similarity)?.grad;
            let n = central_difference(f, &x, epsilon);
            (x, a, n)
        }
        LossSelector::Quantization => {
            let x = inst.codes.clone();
            let f = |x: &[f64]| quantization_loss(&batch(m, k, x), 1.0).value;
            let a = quantization_loss(&batch(m, k, &x), 1.0).grad;
            let n = central_difference(f, &x, epsilon);
            (x, a, n)
        }
        LossSelector::Information => {
            let x = inst.codes.clone();
            let f = |x: &[f64]| information_loss(&batch(m, k, x), 1.0).expect("shape").0.value;
            let a = information_loss(&batch(m, k, &x), 1.0)?.0.grad;
            let n = central_difference(f, &x, epsilon);
            (x, a, n)
        }
        LossSelector::Rotation => {
            let x = codes_and_rotated();
            let f = |x: &[f64]| {
                let (r, rot) = split(x);
                rotation_loss(&r, &rot, 1.0).expect("shape").value
            };
            let (r, rot) = split(&x);
            let t = rotation_loss(&r, &rot, 1.0)?;
            let mut a = t.grad_reference;
            for g in t.grad_rotated {
                a.extend(g);
            }
            let n = central_difference(f, &x, epsilon);
            (x, a, n)
        }
        LossSelector::Total => {
            let x = codes_and_rotated();
            let f = |x: &[f64]| {
                let (r, rot) = split(x);
                total_loss(&r, Some(&rot), &inst.similarity, &inst.weights)
                    .expect("shape")
                    .report
                    .total
            };
            let (r, rot) = split(&x);
            let t = total_loss(&r, Some(&rot), &inst.similarity, &inst.weights)?;
            let mut a = t.grad_reference;
            for g in t.grad_rotated {
                a.extend(g);
            }
            let n = central_difference(f, &x, epsilon);
            (x, a, n)
        }
        LossSelector::Head => {
            let x = inst.head.to_flat();
            let (bits, dim) = (inst.head.bits(), inst.head.dim());
            let objective = |head: &HashHeadParams| -> Result<f64> {
                let (codes, rotated) = head_codes(inst, head)?;
                Ok(total_loss(&codes, Some(&rotated), &inst.similarity, &inst.weights)?
                    .report
                    .total)
            };
            let f = |x: &[f64]| objective(&HashHeadParams::from_flat(bits, dim, x).expect("shape")).expect("shape");
            let (codes, rotated) = head_codes(inst, &inst.head)?;
            let t = total_loss(&codes, Some(&rotated), &inst.similarity, &inst.weights)?;
            let rows: Vec<&[f32]> = inst.features.iter().map(Vec::as_slice).collect();
            let mut g = inst.head.backward(&rows, &codes, &t.grad_reference)?;
            for ((block, cb), grad) in inst.rotated_features.iter().zip(&rotated).zip(&t.grad_rotated) {
                let r: Vec<&[f32]> = block.iter().map(Vec::as_slice).collect();
                g.add(&inst.head.backward(&r, cb, grad)?);
            }
            let n = central_difference(f, &x, epsilon);
            (x, g.to_flat(), n)
        }
    };
    debug_assert_eq!(x.len(), analytic.len());
    Ok(compare(&analytic, &numeric))
}

fn sample_once(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let m = rng.random_range(2..=4);
    let k = rng.random_range(2..=8);
    let d = rng.random_range(2..=8);
    let r = rng.random_range(1..=2);
    let mut gauss_rows = |rows: usize| -> Vec<Vec<f32>> {
        (0..rows)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect())
            .collect()
    };
    let features = gauss_rows(m);
    let rotated_features = (0..r).map(|_| gauss_rows(m)).collect();
    let rows: Vec<&[f32]> = features.iter().map(Vec::as_slice).collect();
    let rho = RhoParam::new(rng.random_range(0.05..2.0))?;
    let similarity = batch_similarity(&rows, rho)?;

    let mut head = init_head(k, d, rng.random())?;
    for c in head.offsets_mut() {
        *c = rng.random_range(-0.5..1.5);
    }
    let codes = (0..m * k).map(|_| rng.random_range(0.0..1.5)).collect();
    let rotated_codes = (0..r)
        .map(|_| (0..m * k).map(|_| rng.random_range(0.0..1.5)).collect())
        .collect();
    let weights = LossWeights {
        w_sem: rng.random_range(0.1..2.0),
        alpha: rng.random_range(0.1..2.0),
        beta: rng.random_range(0.1..2.0),
        gamma: rng.random_range(0.1..2.0),
    };
    Ok(Instance {
        m,
        k,
        features,
        rotated_features,
        head,
        codes,
        rotated_codes,
        similarity,
        weights,
    })
}

/// Draws instances until one clears every kink of `selector` by a margin
/// comfortably wider than the finite-difference step.
pub fn sample_instance(selector: LossSelector, rng: &mut ChaCha8Rng) -> Result<Instance> {
    loop {
        let inst = sample_once(rng)?;
        let mut all_kinks_clear = check_kinks(selector, &inst, SAMPLE_MARGIN).is_ok();
        if selector == LossSelector::Head {
            all_kinks_clear &= check_kinks(LossSelector::Total, &inst, SAMPLE_MARGIN).is_ok();
        }
        if all_kinks_clear {
            return Ok(inst);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub selector: LossSelector,
    pub trials: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

impl TrialSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Runs `trials` randomized kink-excluded checks.
pub fn run_trials(selector: LossSelector, trials: usize, epsilon: f64, seed: u64) -> Result<TrialSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = TrialSummary {
        selector,
        trials,
        max_rel_error: 0.0,
        failures: 0,
    };
    for _ in 0..trials {
        let inst = sample_instance(selector, &mut rng)?;
        let report = gradcheck(selector, &inst, epsilon)?;
        summary.max_rel_error = summary.max_rel_error.max(report.max_rel_error);
        if report.max_rel_error >= selector.tolerance() {
            summary.failures += 1;
        }
    }
    Ok(summary)
}
