//! Hungarian-matched cross-entropy training of the association encoder.
//!
//! Predicted and ground-truth class columns are unordered, so every loss
//! evaluation first aligns ground-truth columns to predicted columns by
//! minimizing `C[p][q] = −Σ_r A[r][p]·A*[r][q]`. The matching is held fixed
//! while differentiating; gradients flow only through `A`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::hungarian_solve;
use crate::encoder::{backward, forward_trace, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{DetectionTable, CLUTTER};

/// Probabilities are clamped here before taking logs.
pub const LOG_CLAMP: f64 = 1e-9;

/// One-hot `n×𝕋` ground truth with the trajectory label of every column.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthAssociation {
    pub entries: Matrix,
    /// Sorted distinct labels; clutter (`-1`), when present, is column 0.
    pub column_labels: Vec<i64>,
}

impl GroundTruthAssociation {
    pub fn from_labels(labels: &[i64]) -> Self {
        let mut column_labels: Vec<i64> = labels.to_vec();
        column_labels.sort_unstable();
        column_labels.dedup();
        let mut entries = Matrix::zeros(labels.len(), column_labels.len());
        for (r, l) in labels.iter().enumerate() {
            let c = column_labels.binary_search(l).expect("label present");
            entries[(r, c)] = 1.0;
        }
        Self { entries, column_labels }
    }

    pub fn from_table(d: &DetectionTable) -> Result<Self> {
        Ok(Self::from_labels(&d.labels()?))
    }

    pub fn clutter_column(&self) -> Option<usize> {
        self.column_labels.iter().position(|&l| l == CLUTTER)
    }

    pub fn trajectory_count(&self) -> usize {
        self.column_labels.len()
    }
}

/// Ground truth reordered onto the predicted columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedTruth {
    /// `n×max(B,𝕋)`; column `p` holds the ground-truth column matched to
    /// predicted column `p` (zeros when matched to padding).
    pub reordered: Matrix,
    /// `matching[p] = q`: predicted column `p` ↔ padded ground-truth column `q`.
    pub matching: Vec<usize>,
}

fn similarity_cost(a: &Matrix, truth: &Matrix) -> Matrix {
    let mut c = a.t_matmul(truth);
    c.scale(-1.0);
    c
}

fn reorder(truth: &Matrix, matching: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(truth.rows(), matching.len());
    for (p, &q) in matching.iter().enumerate() {
        for r in 0..truth.rows() {
            out[(r, p)] = truth[(r, q)];
        }
    }
    out
}

fn check_rows(a: &Matrix, truth: &Matrix) -> Result<()> {
    if a.rows() != truth.rows() {
        return Err(Error::LengthMismatch {
            expected: a.rows(),
            actual: truth.rows(),
        });
    }
    Ok(())
}

/// Zero-pads both matrices to `max(B,𝕋)` columns and aligns ground-truth
/// columns to predicted columns with the Hungarian method.
pub fn pad_and_match(a: &Matrix, truth: &Matrix) -> Result<MatchedTruth> {
    check_rows(a, truth)?;
    let width = a.cols().max(truth.cols());
    let ap = a.pad_columns(width);
    let tp = truth.pad_columns(width);
    let assignment = hungarian_solve(&similarity_cost(&ap, &tp))?;
    let matching: Vec<usize> = assignment.pairs.iter().map(|&(_, q)| q).collect();
    Ok(MatchedTruth {
        reordered: reorder(&tp, &matching),
        matching,
    })
}

/// As [`pad_and_match`], but the ground-truth clutter column (if any) is
/// pinned to predicted column `B − 1` and only the remaining columns are
/// matched.
pub fn pad_and_match_reserved(a: &Matrix, truth: &GroundTruthAssociation) -> Result<MatchedTruth> {
    let Some(clutter) = truth.clutter_column() else {
        return pad_and_match(a, &truth.entries);
    };
    check_rows(a, &truth.entries)?;
    let reserved = a.cols() - 1;
    let width = a.cols().max(truth.trajectory_count());
    let ap = a.pad_columns(width);
    let tp = truth.entries.pad_columns(width);
    let pred_cols: Vec<usize> = (0..width).filter(|&p| p != reserved).collect();
    let truth_cols: Vec<usize> = (0..width).filter(|&q| q != clutter).collect();
    let full = similarity_cost(&ap, &tp);
    let mut sub = Matrix::zeros(pred_cols.len(), truth_cols.len());
    for (i, &p) in pred_cols.iter().enumerate() {
        for (j, &q) in truth_cols.iter().enumerate() {
            sub[(i, j)] = full[(p, q)];
        }
    }
    let assignment = hungarian_solve(&sub)?;
    let mut matching = vec![0usize; width];
    matching[reserved] = clutter;
    for &(i, j) in &assignment.pairs {
        matching[pred_cols[i]] = truth_cols[j];
    }
    Ok(MatchedTruth {
        reordered: reorder(&tp, &matching),
        matching,
    })
}

fn check_same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            what: what.into(),
            expected_rows: b.rows(),
            expected_cols: b.cols(),
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    Ok(())
}

/// `−(1/n)·Σ_p Σ_q log(max(A[p][q], 1e-9))·A*ᵒ[p][q]`
pub fn matched_cross_entropy(a: &Matrix, target: &Matrix) -> Result<f64> {
    check_same_shape(a, target, "association")?;
    if a.rows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (&p, &t) in a.as_slice().iter().zip(target.as_slice()) {
        if t != 0.0 {
            total -= libm::log(p.max(LOG_CLAMP)) * t;
        }
    }
    Ok(total / a.rows() as f64)
}

/// `dL/dA` of [`matched_cross_entropy`] for the first `a.cols()` columns of
/// `target`; padded columns carry no gradient.
pub fn cross_entropy_gradient(a: &Matrix, target: &Matrix) -> Matrix {
    let n = a.rows() as f64;
    let mut g = Matrix::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            let p = a[(r, c)];
            let t = target[(r, c)];
            if t != 0.0 && p > LOG_CLAMP {
                g[(r, c)] = -t / (n * p);
            }
        }
    }
    g
}

/// Jaccard index between `A` binarized at 0.5 and the matched ground truth,
/// counted over matrix cells. Two empty matrices score 1.
pub fn association_jaccard(a: &Matrix, target: &Matrix) -> Result<f64> {
    check_same_shape(a, target, "association")?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &t) in a.as_slice().iter().zip(target.as_slice()) {
        let pb = p >= 0.5;
        let tb = t >= 0.5;
        inter += usize::from(pb && tb);
        union += usize::from(pb || tb);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub lr_max: f64,
    /// Half-period of the triangular schedule, in epochs.
    pub cycle_epochs: usize,
    pub max_epochs: usize,
    pub jsc_target: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Pin ground-truth clutter to the last predicted column.
    pub reserve_clutter_column: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 1e-5,
            lr_max: 1e-3,
            cycle_epochs: 4,
            max_epochs: 2000,
            jsc_target: 0.8,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            reserve_clutter_column: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_base >= 0.0 && self.lr_base <= self.lr_max) {
            return Err(Error::InvalidParameter {
                name: "lr_base",
                reason: format!("need 0 <= lr_base <= lr_max, got {} / {}", self.lr_base, self.lr_max),
            });
        }
        if !(0.0..=1.0).contains(&self.jsc_target) {
            return Err(Error::InvalidParameter {
                name: "jsc_target",
                reason: "must lie in [0, 1]".into(),
            });
        }
        if self.cycle_epochs == 0 {
            return Err(Error::InvalidParameter {
                name: "cycle_epochs",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Triangular learning rate: `lr_max` at step 0, `lr_base` at half period,
/// period `2·cycle_epochs·steps_per_epoch`.
pub fn cyclical_lr(step: usize, cfg: &TrainConfig, steps_per_epoch: usize) -> f64 {
    let period = 2 * cfg.cycle_epochs * steps_per_epoch.max(1);
    let phase = (step % period) as f64 / period as f64;
    cfg.lr_base + (cfg.lr_max - cfg.lr_base) * (1.0 - 2.0 * phase).abs()
}

/// A detection patch with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub detections: DetectionTable,
    pub truth: GroundTruthAssociation,
}

impl TrainingInstance {
    pub fn from_labeled(d: &DetectionTable) -> Result<Self> {
        Ok(Self {
            truth: GroundTruthAssociation::from_table(d)?,
            detections: d.clone(),
        })
    }
}

/// Loss, JSC_A and matched target for one forward pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub jsc: f64,
    pub matched: MatchedTruth,
}

fn match_truth(a: &Matrix, truth: &GroundTruthAssociation, reserve: bool) -> Result<MatchedTruth> {
    if reserve {
        pad_and_match_reserved(a, truth)
    } else {
        pad_and_match(a, &truth.entries)
    }
}

fn score(a: &Matrix, truth: &GroundTruthAssociation, reserve: bool) -> Result<Evaluation> {
    let matched = match_truth(a, truth, reserve)?;
    let padded = a.pad_columns(matched.reordered.cols());
    let loss = matched_cross_entropy(&padded, &matched.reordered)?;
    let jsc = association_jaccard(&padded, &matched.reordered)?;
    Ok(Evaluation { loss, jsc, matched })
}

pub fn evaluate(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    inst: &TrainingInstance,
    reserve_clutter_column: bool,
) -> Result<Evaluation> {
    let trace = forward_trace(&inst.detections, params, cfg)?;
    score(&trace.probs, &inst.truth, reserve_clutter_column)
}

/// Mean loss over `batch` and its exact gradient w.r.t. every parameter.
pub fn compute_gradients(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    batch: &[TrainingInstance],
    reserve_clutter_column: bool,
) -> Result<(f64, EncoderParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for inst in batch {
        let trace = forward_trace(&inst.detections, params, cfg)?;
        let eval = score(&trace.probs, &inst.truth, reserve_clutter_column)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "loss {} on a patch of {} detections",
                eval.loss,
                inst.detections.len()
            )));
        }
        loss += eval.loss;
        let dprobs = cross_entropy_gradient(&trace.probs, &eval.matched.reordered);
        let g = backward(&trace, &dprobs, params);
        for (acc, t) in grad.tensors_mut().into_iter().zip(g.tensors()) {
            acc.add_assign(t);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for t in grad.tensors_mut() {
        t.scale(scale);
    }
    Ok((loss * scale, grad))
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    first: EncoderParams,
    second: EncoderParams,
    steps: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &EncoderParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grad: &EncoderParams, lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.steps as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.steps as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
        {
            let p = p.as_mut_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for (i, &gi) in g.as_slice().iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_jsc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TargetReached,
    MaxEpochs,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation JSC_A seen.
    pub params: EncoderParams,
    pub best_val_jsc: f64,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Mean validation JSC_A over `val`.
pub fn validation_jsc(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    val: &[TrainingInstance],
    reserve_clutter_column: bool,
) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut total = 0.0;
    for inst in val {
        total += evaluate(params, cfg, inst, reserve_clutter_column)?.jsc;
    }
    Ok(total / val.len() as f64)
}

/// One patch per optimizer step; validation after every epoch; stops once
/// the mean validation JSC_A reaches the target.
pub fn train(
    train_set: &[TrainingInstance],
    val_set: &[TrainingInstance],
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    init: EncoderParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    enc.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut params = init;
    let mut best = params.clone();
    let mut best_val_jsc = f64::NEG_INFINITY;
    let mut history = Vec::new();
    let mut adam = Adam::new(&params, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let steps_per_epoch = train_set.len();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = cfg.lr_max;
        for &i in &order {
            lr = cyclical_lr(step, cfg, steps_per_epoch);
            let (loss, grad) = match compute_gradients(&params, enc, &train_set[i..=i], cfg.reserve_clutter_column) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss(_)) => {
                    return Ok(TrainOutcome {
                        params: best,
                        best_val_jsc,
                        history,
                        stop: StopReason::Diverged,
                    });
                }
                Err(e) => return Err(e),
            };
            epoch_loss += loss;
            adam.step(&mut params, &grad, lr);
            step += 1;
        }
        let val_jsc = validation_jsc(&params, enc, val_set, cfg.reserve_clutter_column)?;
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss / steps_per_epoch as f64,
            val_jsc,
            lr,
        });
        if val_jsc > best_val_jsc {
            best_val_jsc = val_jsc;
            best = params.clone();
        }
        if val_jsc >= cfg.jsc_target {
            return Ok(TrainOutcome {
                params: best,
                best_val_jsc,
                history,
                stop: StopReason::TargetReached,
            });
        }
    }
    if history.is_empty() {
        best_val_jsc = validation_jsc(&best, enc, val_set, cfg.reserve_clutter_column)?;
    }
    Ok(TrainOutcome {
        params: best,
        best_val_jsc,
        history,
        stop: StopReason::MaxEpochs,
    })
}
