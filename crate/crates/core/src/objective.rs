//! The weighted joint objective over one [`TrainingBatch`].
//!
//! Pairs from the three child batches are stacked in a fixed order
//! (batch 1, batch 2, batch 3) so that one similarity-network pass covers
//! every pair. Per-term application:
//!
//! | term            | batch 1      | batch 2          | batch 3        |
//! |-----------------|--------------|------------------|----------------|
//! | class CE        |              | both sides       |                |
//! | similarity CE   | target `[1,0]` | label targets  |                |
//! | Laplacian (`λ1`)| `W = 1`      | `W` from labels  |                |
//! | Laplacian (`λ2`)|              |                  | `W` = live net |
//! | consistency     | yes          | yes              | yes            |

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::batching::{target_matrix, TrainingBatch};
use crate::data::{augment, LabelMatrix};
use crate::error::{Error, Result};
use crate::losses::{consistency_sum, cross_entropy_sum, unsup_sum, LossBreakdown, LossWeights};
use crate::matrix::Matrix;
use crate::nn::ModelState;

/// Row indices into the stacked input `[x1; x1_aug; xl1; xl2]` for the left
/// and right side of every pair, in child-batch order.
pub fn pair_rows(batch: &TrainingBatch) -> (Vec<usize>, Vec<usize>) {
    let (b1, b2) = (batch.b1(), batch.b2());
    let mut left: Vec<usize> = (0..b1).collect();
    let mut right: Vec<usize> = (b1..2 * b1).collect();
    left.extend(2 * b1..2 * b1 + b2);
    right.extend(2 * b1 + b2..2 * b1 + 2 * b2);
    left.extend(batch.split.iter().map(|p| p.0));
    right.extend(batch.split.iter().map(|p| p.1));
    (left, right)
}

/// `[x1; x1_aug; xl1; xl2]`
pub fn stacked_inputs(batch: &TrainingBatch) -> Result<Matrix> {
    batch.x1.vstack(&batch.x1_aug)?.vstack(&batch.xl1)?.vstack(&batch.xl2)
}

/// Shadow-network targets for the consistency term: both sides of every
/// pair are re-augmented, encoded with the current feature network, and
/// scored by the EMA similarity parameters. No gradient flows through
/// the result.
pub fn ema_targets<R: Rng + ?Sized>(
    state: &ModelState,
    batch: &TrainingBatch,
    aug_sigma: f64,
    training: bool,
    rng: &mut R,
) -> Result<Matrix> {
    let x = stacked_inputs(batch)?;
    let (left, right) = pair_rows(batch);
    let xl = augment(&x.select_rows(&left)?, aug_sigma, rng);
    let xr = augment(&x.select_rows(&right)?, aug_sigma, rng);
    let (zl, _) = state.feature_forward(&xl, training, rng)?;
    let (zr, _) = state.feature_forward(&xr, training, rng)?;
    state.similarity_forward(&zl, &zr, true, training, rng)
}

/// Attributes a non-finite intermediate value to the loss term being built.
pub(crate) fn term<T>(r: Result<T>, name: &'static str) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss {
            term: name,
            epoch: 0,
            step: 0,
        },
        other => other,
    })
}

/// The recorded objective, ready for [`Tape::backward`].
pub struct LossGraph {
    pub tape: Tape,
    pub total: Var,
    /// Trainable handles in [`ModelState::trainable`] order.
    pub params: Vec<Var>,
    pub breakdown: LossBreakdown,
}

impl LossGraph {
    /// Gradients in [`ModelState::trainable`] order; parameters the loss
    /// does not reach get zeros.
    pub fn gradients(&self) -> Vec<Matrix> {
        self.params
            .iter()
            .map(|&v| {
                self.tape.grad(v).cloned().unwrap_or_else(|| {
                    let (r, c) = self.tape.value(v).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

/// Records the full objective on a fresh tape, given precomputed shadow
/// targets (`pairs x 2`, child-batch order).
pub fn build_loss_graph<R: Rng + ?Sized>(
    state: &ModelState,
    batch: &TrainingBatch,
    targets: &Matrix,
    weights: LossWeights,
    training: bool,
    rng: &mut R,
) -> Result<LossGraph> {
    batch.validate()?;
    let (b1, b2, b3) = (batch.b1(), batch.b2(), batch.b3());
    let pairs = b1 + b2 + b3;

    let mut tape = Tape::new();
    let enc = state.encoder.bind(&mut tape, true);
    let cls = state.classifier.bind(&mut tape, true);
    let sim = state.similarity.bind(&mut tape, true);
    let params: Vec<Var> = enc.vars().chain(cls.vars()).chain(sim.vars()).collect();

    let x = tape.constant(stacked_inputs(batch)?);
    let z = term(state.encoder.forward_tape(&enc, &mut tape, x, training, rng), "encoder")?;
    let f = term(state.classifier.forward_tape(&cls, &mut tape, z, training, rng), "classifier")?;

    let (left, right) = pair_rows(batch);
    let zl = tape.select_rows(z, &left)?;
    let zr = tape.select_rows(z, &right)?;
    let zpair = tape.concat_cols(zl, zr)?;
    let p = term(state.similarity.forward_tape(&sim, &mut tape, zpair, training, rng), "similarity")?;

    // class cross-entropy on both labeled sides of batch 2
    let labeled_rows: Vec<usize> = (2 * b1..2 * b1 + 2 * b2).collect();
    let f_labeled = tape.select_rows(f, &labeled_rows)?;
    let labels: Vec<usize> = batch.yl1.iter().chain(&batch.yl2).copied().collect();
    let y = LabelMatrix::from_labels(&labels, state.classes())?;
    let sup_f = term(cross_entropy_sum(&mut tape, f_labeled, y.matrix()), "sup_f")?;

    // similarity cross-entropy on batches 1 and 2
    let supervised_pairs: Vec<usize> = (0..b1 + b2).collect();
    let p_sup = tape.select_rows(p, &supervised_pairs)?;
    let mut sim_targets = batch.batch1_targets();
    sim_targets.extend(batch.batch2_targets());
    let sup_w = term(cross_entropy_sum(&mut tape, p_sup, &target_matrix(&sim_targets)), "sup_w")?;

    // extended Laplacian with label-derived weights (batches 1 and 2)
    let fl12 = tape.select_rows(f, &left[..b1 + b2])?;
    let fr12 = tape.select_rows(f, &right[..b1 + b2])?;
    let w12 = tape.constant(Matrix::column_vector(sim_targets.iter().map(|t| t.weight()).collect()));
    let unsup12 = term(unsup_sum(&mut tape, fl12, fr12, w12, weights.beta), "unsup_labeled")?;

    // extended Laplacian with learned weights (batch 3)
    let fl3 = tape.select_rows(f, &left[b1 + b2..])?;
    let fr3 = tape.select_rows(f, &right[b1 + b2..])?;
    let batch3_pairs: Vec<usize> = (b1 + b2..pairs).collect();
    let p3 = tape.select_rows(p, &batch3_pairs)?;
    let w3 = tape.column(p3, 0)?;
    let unsup3 = term(unsup_sum(&mut tape, fl3, fr3, w3, weights.beta), "unsup_unlabeled")?;

    let cons = term(consistency_sum(&mut tape, p, targets), "cons")?;

    let sup_norm = (b1 + 2 * b2) as f64;
    let sup_f_n = tape.scale(sup_f, 1.0 / sup_norm)?;
    let sup_w_n = tape.scale(sup_w, 1.0 / sup_norm)?;
    let unsup12_n = tape.scale(unsup12, 1.0 / (b1 + b2) as f64)?;
    let unsup3_n = tape.scale(unsup3, 1.0 / b3 as f64)?;
    let cons_n = tape.scale(cons, 1.0 / pairs as f64)?;

    let t1 = tape.add(sup_f_n, sup_w_n)?;
    let t2 = tape.scale(unsup12_n, weights.lambda1)?;
    let t3 = tape.scale(unsup3_n, weights.lambda2)?;
    let t4 = tape.scale(cons_n, weights.lambda3)?;
    let t12 = tape.add(t1, t2)?;
    let t34 = tape.add(t3, t4)?;
    let total = tape.add(t12, t34)?;

    let scalar = |v: Var| tape.value(v).data()[0];
    let breakdown = LossBreakdown {
        sup_f: scalar(sup_f_n),
        sup_w: scalar(sup_w_n),
        unsup_labeled: scalar(unsup12_n),
        unsup_unlabeled: scalar(unsup3_n),
        cons: scalar(cons_n),
        total: scalar(total),
        weights,
    };
    Ok(LossGraph {
        tape,
        total,
        params,
        breakdown,
    })
}

/// Evaluates the objective: computes shadow targets, then the live graph.
pub fn combined_loss<R: Rng + ?Sized>(
    state: &ModelState,
    batch: &TrainingBatch,
    weights: LossWeights,
    aug_sigma: f64,
    training: bool,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let targets = ema_targets(state, batch, aug_sigma, training, rng)?;
    Ok(build_loss_graph(state, batch, &targets, weights, training, rng)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batching::{build_batch, BatchSpec};
    use crate::data::{make_two_moons, select_labeled};
    use crate::nn::{Architecture, NoRng};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelState, TrainingBatch) {
        let ds = select_labeled(&make_two_moons(200, 0.15, 0).unwrap(), 12, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = build_batch(&ds, &BatchSpec::new(8, 4).unwrap(), 0.05, &mut rng).unwrap();
        let arch = Architecture::with_widths(2, 8, 2, &[12, 6], &[0.2, 0.0]);
        (ModelState::init(&arch, 1, 0.99).unwrap(), batch)
    }

    #[test]
    fn zero_lambdas_leave_supervised_terms() {
        let (state, batch) = setup();
        let w = LossWeights {
            beta: 3.0,
            ..Default::default()
        };
        let b = combined_loss(&state, &batch, w, 0.05, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b.total, b.sup_f + b.sup_w);
        assert!(b.unsup_labeled > 0.0 && b.cons >= 0.0);
    }

    #[test]
    fn total_recomposes() {
        let (state, batch) = setup();
        let w = LossWeights {
            lambda1: 0.3,
            lambda2: 0.7,
            lambda3: 1.1,
            beta: 3.0,
        };
        let b = combined_loss(&state, &batch, w, 0.05, true, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((b.total - b.recompose()).abs() < 1e-12);
    }

    #[test]
    fn every_trainable_parameter_is_reached() {
        let (state, batch) = setup();
        let targets = ema_targets(&state, &batch, 0.0, false, &mut NoRng).unwrap();
        let w = LossWeights {
            lambda1: 0.5,
            lambda2: 0.5,
            lambda3: 0.5,
            beta: 3.0,
        };
        let mut g = build_loss_graph(&state, &batch, &targets, w, false, &mut NoRng).unwrap();
        assert_eq!(g.params.len(), state.trainable().count());
        let total = g.total;
        g.tape.backward(total).unwrap();
        assert!(g.params.iter().all(|&v| g.tape.grad(v).is_some()));
        let trainable = (0..g.tape.len()).filter(|&i| g.params.iter().any(|v| v.index() == i)).count();
        assert_eq!(trainable, g.params.len());
    }

    #[test]
    fn empty_child_batch_rejected() {
        let (state, mut batch) = setup();
        batch.split.clear();
        let err = combined_loss(&state, &batch, LossWeights::default(), 0.0, false, &mut NoRng);
        assert!(matches!(err, Err(crate::Error::Contract(_))));
    }
}
