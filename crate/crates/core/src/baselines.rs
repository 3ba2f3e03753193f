//! Ablation counterparts of the full method: supervised-only training and
//! the Π-model consistency baseline. Both consume the same batch stream as
//! [`train`](crate::trainer::train) for a given seed, so per-seed results
//! are paired.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::batching::TrainingBatch;
use crate::data::{Dataset, LabelMatrix};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_sum, squared_distance, LossBreakdown, LossWeights};
use crate::matrix::Matrix;
use crate::nn::ModelState;
use crate::objective::term;
use crate::trainer::{run_loop, train, StepObjective, Streams, TrainConfig, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[serde(alias = "supervised")]
    SupervisedOnly,
    #[serde(alias = "pi")]
    PiModel,
    #[serde(alias = "full")]
    FullMethod,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [Self::SupervisedOnly, Self::PiModel, Self::FullMethod];

    pub fn name(self) -> &'static str {
        match self {
            Self::SupervisedOnly => "supervised_only",
            Self::PiModel => "pi_model",
            Self::FullMethod => "full_method",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised_only" | "supervised" => Ok(Self::SupervisedOnly),
            "pi_model" | "pi" => Ok(Self::PiModel),
            "full_method" | "full" => Ok(Self::FullMethod),
            other => Err(Error::Parameter(format!("unknown method `{other}`"))),
        }
    }
}

/// Mean squared Euclidean distance between paired rows.
pub fn pi_consistency_loss(clean: &Matrix, perturbed: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(clean.clone());
    let b = tape.constant(perturbed.clone());
    let d = squared_distance(&mut tape, a, b)?;
    let s = tape.sum(d)?;
    Ok(tape.value(s).data()[0] / clean.rows() as f64)
}

/// Class cross-entropy on batch 2, plus (for Π) the squared distance
/// between predictions on batch-1 samples and their perturbed twins.
///
/// The Π weight follows the `lambda1` schedule. It is logged in the `cons`
/// column, with its effective value in `lambda3`.
struct FeatureObjective {
    consistency: bool,
}

impl StepObjective for FeatureObjective {
    fn step(
        &mut self,
        state: &ModelState,
        batch: &TrainingBatch,
        weights: LossWeights,
        streams: &mut Streams,
    ) -> Result<(LossBreakdown, Vec<Matrix>)> {
        let (b1, b2) = (batch.b1(), batch.b2());
        let mut tape = Tape::new();
        let enc = state.encoder.bind(&mut tape, true);
        let cls = state.classifier.bind(&mut tape, true);
        let params: Vec<_> = enc.vars().chain(cls.vars()).collect();

        let mut x = batch.xl1.vstack(&batch.xl2)?;
        if self.consistency {
            x = x.vstack(&batch.x1)?.vstack(&batch.x1_aug)?;
        }
        let x = tape.constant(x);
        let rng = &mut streams.noise;
        let z = term(state.encoder.forward_tape(&enc, &mut tape, x, true, rng), "encoder")?;
        let f = term(state.classifier.forward_tape(&cls, &mut tape, z, true, rng), "classifier")?;

        let labeled: Vec<usize> = (0..2 * b2).collect();
        let f_labeled = tape.select_rows(f, &labeled)?;
        let labels: Vec<usize> = batch.yl1.iter().chain(&batch.yl2).copied().collect();
        let y = LabelMatrix::from_labels(&labels, state.classes())?;
        let sup_f = term(cross_entropy_sum(&mut tape, f_labeled, y.matrix()), "sup_f")?;
        let sup_f = tape.scale(sup_f, 1.0 / (2 * b2) as f64)?;

        let mut breakdown = LossBreakdown {
            weights: LossWeights {
                lambda1: 0.0,
                lambda2: 0.0,
                lambda3: 0.0,
                beta: weights.beta,
            },
            ..Default::default()
        };
        let total = if self.consistency {
            let clean: Vec<usize> = (2 * b2..2 * b2 + b1).collect();
            let perturbed: Vec<usize> = (2 * b2 + b1..2 * b2 + 2 * b1).collect();
            let fc = tape.select_rows(f, &clean)?;
            let fp = tape.select_rows(f, &perturbed)?;
            let d = term(squared_distance(&mut tape, fc, fp), "cons")?;
            let s = tape.sum(d)?;
            let cons = tape.scale(s, 1.0 / b1 as f64)?;
            breakdown.cons = tape.value(cons).data()[0];
            breakdown.weights.lambda3 = weights.lambda1;
            let weighted = tape.scale(cons, weights.lambda1)?;
            tape.add(sup_f, weighted)?
        } else {
            sup_f
        };
        breakdown.sup_f = tape.value(sup_f).data()[0];
        breakdown.total = tape.value(total).data()[0];

        tape.backward(total)?;
        let grads = params
            .iter()
            .map(|&v| {
                tape.grad(v).cloned().unwrap_or_else(|| {
                    let (r, c) = tape.value(v).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        Ok((breakdown, grads))
    }

    fn trains_similarity(&self) -> bool {
        false
    }
}

/// Trains one ablation variant. `FullMethod` is exactly [`train`].
pub fn train_baseline(ds: &Dataset, kind: BaselineKind, cfg: &TrainConfig) -> Result<(ModelState, TrainLog)> {
    match kind {
        BaselineKind::FullMethod => train(ds, cfg),
        BaselineKind::SupervisedOnly => run_loop(ds, cfg, &mut FeatureObjective { consistency: false }),
        BaselineKind::PiModel => run_loop(ds, cfg, &mut FeatureObjective { consistency: true }),
    }
}
