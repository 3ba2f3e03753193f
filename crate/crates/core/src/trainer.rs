//! The joint optimization loop: Adam on the feature and similarity
//! networks, EMA tracking of the similarity parameters, and the warm-up
//! schedules for the learning rate and the loss coefficients.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batching::{assemble_batch, epoch_draws, BatchSpec, TrainingBatch};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights};
use crate::matrix::Matrix;
use crate::nn::{Architecture, ModelState};
use crate::objective::{build_loss_graph, ema_targets};
use crate::optim::{Adam, AdamConfig};

/// Warm-up multiplier curve `max_val * exp(-5 (1 - t)^2)` with
/// `t = clamp((epoch - delay) / ramp_epochs, 0, 1)`.
///
/// Epochs are 1-based and the value is exactly 0 up to and including
/// `delay`, so a delay of 100 keeps the coefficient off for the first 100
/// epochs. A zero-length ramp is a step to `max_val` after `delay`.
pub fn rampup(epoch: usize, max_val: f64, ramp_epochs: usize, delay: usize) -> f64 {
    if epoch <= delay {
        return 0.0;
    }
    if ramp_epochs == 0 {
        return max_val;
    }
    let t = ((epoch - delay) as f64 / ramp_epochs as f64).min(1.0);
    if t == 1.0 {
        max_val
    } else {
        max_val * (-5.0 * (1.0 - t) * (1.0 - t)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSchedule {
    pub lambda13_rampup_epochs: usize,
    pub lambda2_zero_until: usize,
    pub lambda2_rampup_epochs: usize,
    pub lr_rampup_epochs: usize,
}

impl Default for RampSchedule {
    fn default() -> Self {
        Self {
            lambda13_rampup_epochs: 80,
            lambda2_zero_until: 100,
            lambda2_rampup_epochs: 50,
            lr_rampup_epochs: 80,
        }
    }
}

impl RampSchedule {
    fn last_epoch(&self) -> usize {
        self.lambda13_rampup_epochs
            .max(self.lambda2_zero_until + self.lambda2_rampup_epochs)
            .max(self.lr_rampup_epochs)
    }
}

/// Widths of the networks; the input and class dimensions come from the
/// dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub latent: usize,
    pub sim_hidden: Vec<usize>,
    pub sim_dropout: Vec<f64>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latent: 100,
            sim_hidden: vec![512, 128, 64],
            sim_dropout: vec![0.2, 0.2, 0.0],
        }
    }
}

impl NetConfig {
    pub fn architecture(&self, input_dim: usize, classes: usize) -> Architecture {
        Architecture::with_widths(input_dim, self.latent, classes, &self.sim_hidden, &self.sim_dropout)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta: f64,
    /// `lambda1 = k1 * l / n`
    pub k1: f64,
    /// `lambda2 = k2 * l / n`
    pub k2: f64,
    pub lambda3_max: f64,
    pub epochs: usize,
    pub lr_max: f64,
    pub adam: AdamConfig,
    pub ema_decay: f64,
    pub ramp: RampSchedule,
    pub spec: BatchSpec,
    pub aug_sigma: f64,
    pub seed: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 3.0,
            k1: 3.0,
            k2: 3.0,
            lambda3_max: 0.15,
            epochs: 200,
            lr_max: 3e-3,
            adam: AdamConfig::default(),
            ema_decay: 0.99,
            ramp: RampSchedule::default(),
            spec: BatchSpec::toy(),
            aug_sigma: 0.05,
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(config_err("beta", "must be positive"));
        }
        for (field, v) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("lambda3_max", self.lambda3_max),
            ("aug_sigma", self.aug_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(field, "must be non-negative"));
            }
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(config_err("lr_max", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(config_err("ema_decay", "must lie in [0, 1)"));
        }
        if self.epochs > 0 && self.ramp.last_epoch() > self.epochs {
            return Err(config_err(
                "ramp",
                format!(
                    "schedule runs to epoch {} but training stops at {}",
                    self.ramp.last_epoch(),
                    self.epochs
                ),
            ));
        }
        self.net
            .architecture(2, 2)
            .validate()
            .map_err(|e| config_err("net", e.to_string()))?;
        Ok(())
    }

    /// Effective coefficients and learning rate at a 1-based epoch, for a
    /// training set of `n` samples with `l` labels.
    pub fn schedule_at(&self, epoch: usize, l: usize, n: usize) -> (LossWeights, f64) {
        let frac = l as f64 / n as f64;
        let r = &self.ramp;
        let weights = LossWeights {
            lambda1: rampup(epoch, self.k1 * frac, r.lambda13_rampup_epochs, 0),
            lambda2: rampup(epoch, self.k2 * frac, r.lambda2_rampup_epochs, r.lambda2_zero_until),
            lambda3: rampup(epoch, self.lambda3_max, r.lambda13_rampup_epochs, 0),
            beta: self.beta,
        };
        (weights, rampup(epoch, self.lr_max, r.lr_rampup_epochs, 0))
    }
}

/// One optimization step. Wall time is kept out of this row so that logs
/// of identical runs are byte-identical; see [`EpochSummary`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub step: usize,
    pub sup_f: f64,
    pub sup_w: f64,
    pub unsup_labeled: f64,
    pub unsup_unlabeled: f64,
    pub cons: f64,
    pub total: f64,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl TrainLogRow {
    fn new(epoch: usize, step: usize, lr: f64, b: &LossBreakdown) -> Self {
        Self {
            epoch,
            step,
            sup_f: b.sup_f,
            sup_w: b.sup_w,
            unsup_labeled: b.unsup_labeled,
            unsup_unlabeled: b.unsup_unlabeled,
            cons: b.cons,
            total: b.total,
            lr,
            lambda1: b.weights.lambda1,
            lambda2: b.weights.lambda2,
            lambda3: b.weights.lambda3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_sup_f: f64,
    pub mean_total: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record([
                "epoch",
                "step",
                "sup_f",
                "sup_w",
                "unsup_labeled",
                "unsup_unlabeled",
                "cons",
                "total",
                "lr",
                "lambda1",
                "lambda2",
                "lambda3",
            ])?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn save_epochs_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &self.epochs)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TrainLogRow>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    /// Total wall time over all epochs.
    pub fn wall_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_seconds).sum()
    }
}

/// Independent random streams of one run, derived from the run seed:
/// batch assembly, dropout, and shadow-target perturbations.
pub struct Streams {
    pub batches: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub shadow: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let s = |k: u64| ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03));
        Self {
            batches: s(1),
            noise: s(2),
            shadow: s(3),
        }
    }
}

/// What one step optimizes. [`train`] and the ablation baselines differ
/// only in this.
pub trait StepObjective {
    /// Loss breakdown and gradients for the parameters this objective trains.
    fn step(
        &mut self,
        state: &ModelState,
        batch: &TrainingBatch,
        weights: LossWeights,
        streams: &mut Streams,
    ) -> Result<(LossBreakdown, Vec<Matrix>)>;

    /// Whether the similarity network is trained (and its EMA updated).
    fn trains_similarity(&self) -> bool;
}

struct FullObjective {
    aug_sigma: f64,
}

impl StepObjective for FullObjective {
    fn step(
        &mut self,
        state: &ModelState,
        batch: &TrainingBatch,
        weights: LossWeights,
        streams: &mut Streams,
    ) -> Result<(LossBreakdown, Vec<Matrix>)> {
        let targets = ema_targets(state, batch, self.aug_sigma, true, &mut streams.shadow)?;
        let mut graph = build_loss_graph(state, batch, &targets, weights, true, &mut streams.noise)?;
        let total = graph.total;
        graph.tape.backward(total)?;
        Ok((graph.breakdown, graph.gradients()))
    }

    fn trains_similarity(&self) -> bool {
        true
    }
}

/// Runs the full method.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(ModelState, TrainLog)> {
    let mut objective = FullObjective {
        aug_sigma: cfg.aug_sigma,
    };
    run_loop(ds, cfg, &mut objective)
}

/// Initial parameters of a run, as [`train`] would start from.
pub fn initial_state(ds: &Dataset, cfg: &TrainConfig) -> Result<ModelState> {
    cfg.validate()?;
    ModelState::init(&cfg.net.architecture(ds.dim(), ds.classes), cfg.seed, cfg.ema_decay)
}

fn stamp(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss { term, epoch, step },
        Error::NonFinite { op } => Error::NonFiniteLoss { term: op, epoch, step },
        other => other,
    }
}

pub fn run_loop<O: StepObjective>(ds: &Dataset, cfg: &TrainConfig, objective: &mut O) -> Result<(ModelState, TrainLog)> {
    let mut state = initial_state(ds, cfg)?;
    if ds.labeled.is_empty() {
        return Err(Error::Contract("training needs a labeled subset".into()));
    }
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((state, log));
    }
    let trains_sim = objective.trains_similarity();
    let mut adam = if trains_sim {
        Adam::new(cfg.adam, state.trainable())?
    } else {
        Adam::new(cfg.adam, state.theta())?
    };
    let mut streams = Streams::new(cfg.seed);
    let (l, n) = (ds.labeled.len(), ds.len());
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let (weights, lr) = cfg.schedule_at(epoch, l, n);
        let draws = epoch_draws(n, &cfg.spec, &mut streams.batches)?;
        let steps = draws.len();
        let (mut sum_sup_f, mut sum_total) = (0.0, 0.0);
        for x1_index in draws {
            step += 1;
            let batch = assemble_batch(ds, &cfg.spec, cfg.aug_sigma, x1_index, &mut streams.batches)?;
            let (breakdown, grads) = objective
                .step(&state, &batch, weights, &mut streams)
                .map_err(|e| stamp(e, epoch, step))?;
            if let Some(term) = breakdown.first_non_finite() {
                return Err(Error::NonFiniteLoss { term, epoch, step });
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    term: "gradient",
                    epoch,
                    step,
                });
            }
            if trains_sim {
                adam.step(lr, state.trainable_mut(), &grads)?;
                state.ema_update(cfg.ema_decay)?;
            } else {
                let theta = state.encoder.params_mut().chain(state.classifier.params_mut());
                adam.step(lr, theta, &grads)?;
            }
            sum_sup_f += breakdown.sup_f;
            sum_total += breakdown.total;
            log.rows.push(TrainLogRow::new(epoch, step, lr, &breakdown));
        }
        log.epochs.push(EpochSummary {
            epoch,
            steps,
            mean_sup_f: sum_sup_f / steps as f64,
            mean_total: sum_total / steps as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(rampup(0, 2.0, 80, 0), 0.0);
        assert_eq!(rampup(80, 2.0, 80, 0), 2.0);
        assert_eq!(rampup(500, 2.0, 80, 0), 2.0);
        assert_eq!(rampup(100, 2.0, 50, 100), 0.0);
        assert_eq!(rampup(150, 2.0, 50, 100), 2.0);
        assert_eq!(rampup(3, 2.0, 0, 2), 2.0);
    }

    #[test]
    fn ramp_start_value() {
        // t -> 0+: exp(-5) of the maximum
        let v = rampup(101, 1.0, 1_000_000, 100);
        assert!((v - (-5.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn ramp_monotone() {
        let vals: Vec<f64> = (0..100).map(|e| rampup(e, 1.0, 60, 10)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn default_schedule_values() {
        let cfg = TrainConfig::default();
        let max2 = cfg.k2 * 12.0 / 6000.0;
        for e in 1..=100 {
            assert_eq!(cfg.schedule_at(e, 12, 6000).0.lambda2, 0.0);
        }
        assert!(cfg.schedule_at(101, 12, 6000).0.lambda2 > 0.0);
        assert_eq!(cfg.schedule_at(150, 12, 6000).0.lambda2, max2);
        let (w80, lr80) = cfg.schedule_at(80, 12, 6000);
        assert_eq!(w80.lambda1, cfg.k1 * 12.0 / 6000.0);
        assert_eq!(w80.lambda3, cfg.lambda3_max);
        assert_eq!(lr80, cfg.lr_max);
        assert!(cfg.schedule_at(79, 12, 6000).0.lambda3 < cfg.lambda3_max);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            beta: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "beta"));
        let short = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        assert!(matches!(short.validate(), Err(Error::Config { field, .. }) if field == "ramp"));
        let untrained = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(untrained.validate().is_ok());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"beta": 3.0, "betta": 1.0}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"epochs": 0}"#).unwrap();
        assert_eq!(ok.beta, 3.0);
    }
}
