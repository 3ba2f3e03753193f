//! Loss terms of the joint objective.
//!
//! The `*_sum` functions build terms on a [`Tape`] as sums over rows or
//! pairs; the combined objective divides those sums by its own child-batch
//! normalizers. The plain-matrix functions (`loss_sup_f`, `loss_unsup`, ...)
//! return per-row or per-pair means.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batching::{target_matrix, SimilarityTarget};
use crate::data::LabelMatrix;
use crate::error::{dim, Result};
use crate::matrix::Matrix;

/// Lower clamp applied to every probability (and to `1 - A`) before `ln`.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-sum_k targets_k ln(clamp(probs_k))` over every row.
pub fn cross_entropy_sum(tape: &mut Tape, probs: Var, targets: &Matrix) -> Result<Var> {
    let p = tape.value(probs);
    if p.shape() != targets.shape() {
        return Err(dim(
            "cross_entropy",
            format!("{:?} probabilities vs {:?} targets", p.shape(), targets.shape()),
        ));
    }
    let clamped = tape.clamp(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    let logs = tape.ln(clamped)?;
    let picked = tape.mul_const(logs, targets)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0)
}

/// Row-wise squared Euclidean distance, `n x 1`.
pub fn squared_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d)?;
    tape.sum_cols(sq)
}

/// Per-pair extended Laplacian terms
/// `beta W d^2 - (1 - W) ln(1 - exp(-beta d^2))`, summed.
///
/// `w` is an `n x 1` node: a constant for label-derived weights or the
/// live similarity output.
pub fn unsup_sum(tape: &mut Tape, fi: Var, fj: Var, w: Var, beta: f64) -> Result<Var> {
    let d2 = squared_distance(tape, fi, fj)?;
    if tape.value(w).shape() != tape.value(d2).shape() {
        return Err(dim(
            "unsup",
            format!("{:?} weights for {} pairs", tape.value(w).shape(), tape.value(d2).rows()),
        ));
    }
    let weighted = tape.mul(w, d2)?;
    let attract = tape.scale(weighted, beta)?;

    let neg = tape.scale(d2, -beta)?;
    let a = tape.exp(neg)?;
    let one_minus_a = tape.affine(a, -1.0, 1.0)?;
    let clamped = tape.clamp(one_minus_a, PROB_FLOOR, 1.0)?;
    let log_gap = tape.ln(clamped)?;
    let one_minus_w = tape.affine(w, -1.0, 1.0)?;
    let repel = tape.mul(one_minus_w, log_gap)?;

    let per_pair = tape.sub(attract, repel)?;
    tape.sum(per_pair)
}

/// `sum_k ||live_k - target_k||^2`, with `target` held constant.
pub fn consistency_sum(tape: &mut Tape, live: Var, target: &Matrix) -> Result<Var> {
    let t = tape.constant(target.clone());
    let d2 = squared_distance(tape, live, t)?;
    tape.sum(d2)
}

fn eval_scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

/// Mean categorical cross-entropy of class probabilities against one-hot labels.
pub fn loss_sup_f(probs: &Matrix, labels: &LabelMatrix) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let s = cross_entropy_sum(&mut tape, p, labels.matrix())?;
    Ok(eval_scalar(&tape, s) / probs.rows() as f64)
}

/// Mean pairwise cross-entropy of similarity outputs against their targets.
pub fn loss_sup_w(sim: &Matrix, targets: &[SimilarityTarget]) -> Result<f64> {
    if sim.rows() != targets.len() {
        return Err(dim("loss_sup_w", format!("{} outputs for {} targets", sim.rows(), targets.len())));
    }
    let mut tape = Tape::new();
    let p = tape.constant(sim.clone());
    let s = cross_entropy_sum(&mut tape, p, &target_matrix(targets))?;
    Ok(eval_scalar(&tape, s) / sim.rows() as f64)
}

/// Classifier confidence `A_k = exp(-beta ||fi_k - fj_k||^2)` per pair.
pub fn confidence_kernel(fi: &Matrix, fj: &Matrix, beta: f64) -> Result<Vec<f64>> {
    fi.expect_same_shape(fj, "confidence_kernel")?;
    Ok(fi
        .iter_rows()
        .zip(fj.iter_rows())
        .map(|(a, b)| {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-beta * d2).exp()
        })
        .collect())
}

/// Mean extended graph-Laplacian loss over aligned pairs.
pub fn loss_unsup(fi: &Matrix, fj: &Matrix, w: &[f64], beta: f64) -> Result<f64> {
    fi.expect_same_shape(fj, "loss_unsup")?;
    if w.len() != fi.rows() {
        return Err(dim("loss_unsup", format!("{} weights for {} pairs", w.len(), fi.rows())));
    }
    let mut tape = Tape::new();
    let a = tape.constant(fi.clone());
    let b = tape.constant(fj.clone());
    let wv = tape.constant(Matrix::column_vector(w.to_vec()));
    let s = unsup_sum(&mut tape, a, b, wv, beta)?;
    Ok(eval_scalar(&tape, s) / fi.rows() as f64)
}

/// Mean squared distance between live and shadow similarity outputs.
pub fn loss_cons(live: &Matrix, ema: &Matrix) -> Result<f64> {
    live.expect_same_shape(ema, "loss_cons")?;
    let mut tape = Tape::new();
    let l = tape.constant(live.clone());
    let s = consistency_sum(&mut tape, l, ema)?;
    Ok(eval_scalar(&tape, s) / live.rows() as f64)
}

/// Effective coefficients at one optimization step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub beta: f64,
}

/// The parts of the objective, each already divided by its child-batch
/// normalizer but not yet multiplied by its coefficient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sup_f: f64,
    pub sup_w: f64,
    /// Extended Laplacian over batches 1 and 2 (label-derived weights).
    pub unsup_labeled: f64,
    /// Extended Laplacian over batch 3 (learned weights).
    pub unsup_unlabeled: f64,
    pub cons: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn recompose(&self) -> f64 {
        let w = &self.weights;
        self.sup_f + self.sup_w + w.lambda1 * self.unsup_labeled + w.lambda2 * self.unsup_unlabeled + w.lambda3 * self.cons
    }

    /// First non-finite part, by name.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("sup_f", self.sup_f),
            ("sup_w", self.sup_w),
            ("unsup_labeled", self.unsup_labeled),
            ("unsup_unlabeled", self.unsup_unlabeled),
            ("cons", self.cons),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}
