//! Two-stage mini-batch gradient descent with momentum over the hashing
//! head. Stage 1 minimizes the semantic, quantization and balance terms;
//! stage 2 adds the rotation term using the feature set's rotation blocks.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{parse_f64_list, FeatureSet};
use crate::head::{init_head, CodeBatch, HashHeadParams, HeadGradient};
use crate::index::{evaluate_map, label_sets, EvalReport};
use crate::losses::{total_loss, LossReport, LossWeights};
use crate::similarity::{batch_similarity, RhoParam};

/// Abort when an epoch's mean loss exceeds this multiple of the first
/// epoch's.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub bits: usize,
    pub rho: RhoParam,
    pub weights: LossWeights,
    pub lr: f64,
    pub momentum: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Angles (degrees) of the rotation blocks, in block order. Metadata:
    /// when non-empty its length must match the feature set's `R`.
    pub rotation_angles: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: 32,
            rho: RhoParam::default(),
            weights: LossWeights::default(),
            lr: 1e-4,
            momentum: 0.9,
            epochs_stage1: 200,
            epochs_stage2: 100,
            batch_size: 32,
            seed: 42,
            rotation_angles: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::invalid("bits must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        self.weights.validate()
    }

    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("bad value {v:?}: {e}"))
        }
        match key {
            "bits" => self.bits = num(value)?,
            "rho" => self.rho = RhoParam::new(num(value)?).map_err(|e| e.to_string())?,
            "w_sem" => self.weights.w_sem = num(value)?,
            "alpha" => self.weights.alpha = num(value)?,
            "beta" => self.weights.beta = num(value)?,
            "gamma" => self.weights.gamma = num(value)?,
            "lr" => self.lr = num(value)?,
            "momentum" => self.momentum = num(value)?,
            "epochs_stage1" => self.epochs_stage1 = num(value)?,
            "epochs_stage2" => self.epochs_stage2 = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "seed" => self.seed = num(value)?,
            "rotation_angles" => self.rotation_angles = parse_f64_list(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Applies `key=value` lines (`#` comments and blank lines ignored) on
    /// top of `self`, returning the keys that were set.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: lineno + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|message| Error::Config {
                line: lineno + 1,
                message,
            })?;
            keys.push(k.trim().to_string());
        }
        Ok(keys)
    }

    /// The resolved configuration as `key=value` lines; feeding this back
    /// through [`TrainConfig::apply_text`] reproduces `self`.
    pub fn to_text(&self) -> String {
        let angles = self
            .rotation_angles
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let _ = writeln!(out, "bits={}", self.bits);
        let _ = writeln!(out, "rho={}", self.rho.get());
        let _ = writeln!(out, "w_sem={}", self.weights.w_sem);
        let _ = writeln!(out, "alpha={}", self.weights.alpha);
        let _ = writeln!(out, "beta={}", self.weights.beta);
        let _ = writeln!(out, "gamma={}", self.weights.gamma);
        let _ = writeln!(out, "lr={}", self.lr);
        let _ = writeln!(out, "momentum={}", self.momentum);
        let _ = writeln!(out, "epochs_stage1={}", self.epochs_stage1);
        let _ = writeln!(out, "epochs_stage2={}", self.epochs_stage2);
        let _ = writeln!(out, "batch_size={}", self.batch_size);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "rotation_angles={angles}");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counted across both stages.
    pub epoch: usize,
    pub stage: Stage,
    /// Mean over the epoch's batches, measured before each update.
    pub report: LossReport,
    pub wall: Duration,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let r = &self.report;
        format!(
            "epoch={} j1={} j2={} j3={} j4={} total={}",
            self.epoch, r.j1, r.j2, r.j3, r.j4, r.total
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub params: HashHeadParams,
}

impl TrainTrace {
    /// Epoch records with wall-clock times dropped, for reproducibility
    /// comparisons.
    pub fn reports(&self) -> Vec<(usize, Stage, &LossReport)> {
        self.epochs.iter().map(|e| (e.epoch, e.stage, &e.report)).collect()
    }
}

/// Shuffled mini-batches of row indices for one epoch. The shuffle is
/// seeded by `(seed, epoch)`; a trailing batch smaller than 2 is dropped.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::invalid(format!("batch size must be >= 2, got {batch_size}")));
    }
    if n < batch_size {
        return Err(Error::invalid(format!(
            "need n >= batch size, got n = {n} < {batch_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}

struct Optimizer {
    lr: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Optimizer {
    fn new(lr: f64, momentum: f64, len: usize) -> Self {
        Optimizer {
            lr,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    /// Classical momentum: `v <- mu v - lr g; theta <- theta + v`.
    fn step(&mut self, params: &mut HashHeadParams, grad: &HeadGradient) {
        let (vw, vc) = self.velocity.split_at_mut(params.weights().len());
        for ((p, v), g) in params.weights_mut().iter_mut().zip(vw).zip(&grad.weights) {
            *v = self.momentum * *v - self.lr * g;
            *p += *v;
        }
        for ((p, v), g) in params.offsets_mut().iter_mut().zip(vc).zip(&grad.offsets) {
            *v = self.momentum * *v - self.lr * g;
            *p += *v;
        }
    }
}

/// Loss and head gradient for one batch.
fn batch_step(
    head: &HashHeadParams,
    fs: &FeatureSet,
    idx: &[usize],
    cfg: &TrainConfig,
    with_rotation: bool,
) -> Result<(LossReport, HeadGradient)> {
    let rows = fs.rows(0, idx);
    let codes = head.forward(&rows)?;
    let s = batch_similarity(&rows, cfg.rho)?;
    let rotated_rows: Vec<Vec<&[f32]>> = if with_rotation {
        (1..=fs.rotations()).map(|b| fs.rows(b, idx)).collect()
    } else {
        Vec::new()
    };
    let rotated: Vec<CodeBatch> = rotated_rows.iter().map(|r| head.forward(r)).collect::<Result<_>>()?;
    let loss = total_loss(&codes, with_rotation.then_some(rotated.as_slice()), &s, &cfg.weights)?;
    let mut grad = head.backward(&rows, &codes, &loss.grad_reference)?;
    for ((r, cb), g) in rotated_rows.iter().zip(&rotated).zip(&loss.grad_rotated) {
        grad.add(&head.backward(r, cb, g)?);
    }
    Ok((loss.report, grad))
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let k = reports.first().map_or(0, |r| r.mu.len());
    let mut out = LossReport {
        mu: vec![0.0; k],
        ..LossReport::default()
    };
    for r in reports {
        out.j1 += r.j1;
        out.j2 += r.j2;
        out.j3 += r.j3;
        out.j4 += r.j4;
        out.total += r.total;
        for (a, b) in out.mu.iter_mut().zip(&r.mu) {
            *a += b;
        }
    }
    out.j1 /= n;
    out.j2 /= n;
    out.j3 /= n;
    out.j4 /= n;
    out.total /= n;
    out.mu.iter_mut().for_each(|v| *v /= n);
    out
}

/// Trains a freshly initialized head.
pub fn train(fs: &FeatureSet, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let head = init_head(cfg.bits, fs.dim(), cfg.seed)?;
    train_from(fs, cfg, head, |_| {})
}

/// Trains `head` in place of a fresh initialization, reporting each epoch
/// to `on_epoch` as it completes.
pub fn train_from(
    fs: &FeatureSet,
    cfg: &TrainConfig,
    mut head: HashHeadParams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainTrace> {
    cfg.validate()?;
    if head.dim() != fs.dim() || head.bits() != cfg.bits {
        return Err(Error::DimensionMismatch {
            context: "head vs features/config",
            expected: fs.dim(),
            found: head.dim(),
        });
    }
    if cfg.epochs_stage2 > 0 && fs.rotations() == 0 {
        return Err(Error::NoRotations);
    }
    if !cfg.rotation_angles.is_empty() && cfg.rotation_angles.len() != fs.rotations() {
        return Err(Error::invalid(format!(
            "{} rotation angles configured but the feature set has {} rotation blocks",
            cfg.rotation_angles.len(),
            fs.rotations()
        )));
    }
    let total_epochs = cfg.epochs_stage1 + cfg.epochs_stage2;
    if total_epochs > 0 && fs.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "need at least batch_size = {} items, got {}",
            cfg.batch_size,
            fs.len()
        )));
    }

    let mut opt = Optimizer::new(cfg.lr, cfg.momentum, head.num_params());
    let mut epochs = Vec::with_capacity(total_epochs);
    let mut initial_total: Option<f64> = None;

    for epoch in 1..=total_epochs {
        let stage = if epoch <= cfg.epochs_stage1 {
            Stage::One
        } else {
            Stage::Two
        };
        let started = Instant::now();
        let mut reports = Vec::new();
        for idx in make_batches(fs.len(), cfg.batch_size, cfg.seed, epoch as u64)? {
            let (report, grad) = batch_step(&head, fs, &idx, cfg, stage == Stage::Two)?;
            if let Some(term) = report.first_non_finite() {
                return Err(Error::NonFiniteLoss { term, epoch });
            }
            opt.step(&mut head, &grad);
            reports.push(report);
        }
        let report = mean_report(&reports);
        let initial = *initial_total.get_or_insert(report.total);
        if initial > 0.0 && report.total > DIVERGENCE_FACTOR * initial {
            return Err(Error::Diverged {
                epoch,
                total: report.total,
                initial,
            });
        }
        let record = EpochRecord {
            epoch,
            stage,
            report,
            wall: started.elapsed(),
        };
        on_epoch(&record);
        epochs.push(record);
    }
    Ok(TrainTrace { epochs, params: head })
}

/// Encodes `db` and `queries` with `head` and computes MAP@K. Both sets
/// need labels.
pub fn evaluate_head(head: &HashHeadParams, db: &FeatureSet, queries: &FeatureSet, top_k: usize) -> Result<EvalReport> {
    let index = head.encode(db, 0)?;
    let query_codes = head.encode(queries, 0)?;
    let codes: Vec<_> = query_codes.iter().map(|(_, c)| c).collect();
    let (db_labels, q_labels) = match (db.labels(), queries.labels()) {
        (Some(d), Some(q)) => (label_sets(d), label_sets(q)),
        _ => return Err(Error::invalid("evaluation needs labels for database and queries")),
    };
    evaluate_map(&index, &codes, &q_labels, &db_labels, top_k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rho: f64,
    pub map_at_k: f64,
    pub final_total: f64,
}

/// Trains one head per `rho` (runs are independent and execute in
/// parallel) and evaluates each with MAP@K.
pub fn rho_sweep(
    db: &FeatureSet,
    queries: &FeatureSet,
    cfg: &TrainConfig,
    rho_list: &[f64],
    top_k: usize,
) -> Result<Vec<SweepRow>> {
    if rho_list.is_empty() {
        return Err(Error::invalid("rho list must not be empty"));
    }
    let rhos = rho_list.iter().map(|&r| RhoParam::new(r)).collect::<Result<Vec<_>>>()?;
    rhos.par_iter()
        .map(|&rho| {
            let run_cfg = TrainConfig { rho, ..cfg.clone() };
            let trace = train(db, &run_cfg)?;
            let report = evaluate_head(&trace.params, db, queries, top_k)?;
            Ok(SweepRow {
                rho: rho.get(),
                map_at_k: report.map_at_k,
                final_total: trace.epochs.last().map_or(0.0, |e| e.report.total),
            })
        })
        .collect()
}

pub fn format_sweep_table(rows: &[SweepRow], top_k: usize) -> String {
    let mut out = format!("{:>10}  {:>12}  {:>14}\n", "rho", format!("map@{top_k}"), "final_loss");
    for r in rows {
        let _ = writeln!(out, "{:>10}  {:>12.6}  {:>14.6}", r.rho, r.map_at_k, r.final_total);
    }
    out
}
