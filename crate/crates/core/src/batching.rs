//! Training batches made of three child batches of sample pairs:
//!
//! * batch 1: `(x, Augment(x))` virtual similar pairs drawn from the whole set,
//! * batch 2: positionally paired draws from the labeled subset,
//! * batch 3: a random split of batch 1's clean samples into two halves.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Child-batch sizes. `b3` is always `b1 / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBatchSpec", into = "RawBatchSpec")]
pub struct BatchSpec {
    b1: usize,
    b2: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBatchSpec {
    b1: usize,
    b2: usize,
    #[serde(default)]
    b3: Option<usize>,
}

impl TryFrom<RawBatchSpec> for BatchSpec {
    type Error = Error;

    fn try_from(raw: RawBatchSpec) -> Result<Self> {
        let spec = Self::new(raw.b1, raw.b2)?;
        if let Some(b3) = raw.b3 {
            if b3 != spec.b3() {
                return Err(Error::Parameter(format!("b3 must equal b1 / 2 = {}, got {b3}", spec.b3())));
            }
        }
        Ok(spec)
    }
}

impl From<BatchSpec> for RawBatchSpec {
    fn from(s: BatchSpec) -> Self {
        Self {
            b1: s.b1,
            b2: s.b2,
            b3: Some(s.b3()),
        }
    }
}

impl BatchSpec {
    pub fn new(b1: usize, b2: usize) -> Result<Self> {
        if b1 == 0 || b1 % 2 != 0 {
            return Err(Error::Parameter(format!("b1 must be even and positive, got {b1}")));
        }
        if b2 == 0 {
            return Err(Error::Parameter("b2 must be positive".into()));
        }
        Ok(Self { b1, b2 })
    }

    /// The image-scale sizes (100, 10, 50).
    pub fn image_scale() -> Self {
        Self { b1: 100, b2: 10 }
    }

    /// Scaled-down sizes (20, 6, 10) for a dozen labels.
    pub fn toy() -> Self {
        Self { b1: 20, b2: 6 }
    }

    pub fn b1(&self) -> usize {
        self.b1
    }

    pub fn b2(&self) -> usize {
        self.b2
    }

    pub fn b3(&self) -> usize {
        self.b1 / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarityTarget {
    Similar,
    Dissimilar,
}

impl SimilarityTarget {
    pub fn for_labels(a: usize, b: usize) -> Self {
        if a == b {
            Self::Similar
        } else {
            Self::Dissimilar
        }
    }

    /// `[1, 0]` for similar, `[0, 1]` for dissimilar.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Self::Similar => [1.0, 0.0],
            Self::Dissimilar => [0.0, 1.0],
        }
    }

    pub fn weight(self) -> f64 {
        self.one_hot()[0]
    }
}

/// Stacks targets into a `pairs x 2` matrix.
pub fn target_matrix(targets: &[SimilarityTarget]) -> Matrix {
    let data = targets.iter().flat_map(|t| t.one_hot()).collect();
    Matrix::new(targets.len(), 2, data).expect("two columns per target")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    /// Clean batch-1 samples.
    pub x1: Matrix,
    /// Their augmented twins.
    pub x1_aug: Matrix,
    /// Dataset indices of `x1` rows.
    pub x1_index: Vec<usize>,
    pub xl1: Matrix,
    pub xl2: Matrix,
    pub yl1: Vec<usize>,
    pub yl2: Vec<usize>,
    /// Batch-3 pairs as row indices into `x1`.
    pub split: Vec<(usize, usize)>,
}

impl TrainingBatch {
    pub fn b1(&self) -> usize {
        self.x1.rows()
    }

    pub fn b2(&self) -> usize {
        self.xl1.rows()
    }

    pub fn b3(&self) -> usize {
        self.split.len()
    }

    /// Batch-1 pairs are similar by construction.
    pub fn batch1_targets(&self) -> Vec<SimilarityTarget> {
        vec![SimilarityTarget::Similar; self.b1()]
    }

    pub fn batch2_targets(&self) -> Vec<SimilarityTarget> {
        self.yl1
            .iter()
            .zip(&self.yl2)
            .map(|(&a, &b)| SimilarityTarget::for_labels(a, b))
            .collect()
    }

    /// Checks the structural invariants: sizes, targets, split partition.
    pub fn validate(&self) -> Result<()> {
        if self.b1() == 0 || self.b2() == 0 || self.b3() == 0 {
            return Err(Error::Contract("empty child batch".into()));
        }
        if self.x1_aug.shape() != self.x1.shape()
            || self.xl2.shape() != self.xl1.shape()
            || self.yl1.len() != self.b2()
            || self.yl2.len() != self.b2()
            || self.b3() * 2 != self.b1()
        {
            return Err(Error::Contract("inconsistent child batch sizes".into()));
        }
        let mut seen = vec![false; self.b1()];
        for &(a, b) in &self.split {
            for i in [a, b] {
                if i >= self.b1() || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Contract("batch-3 split is not a partition of batch 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Number of optimization steps in one pass of batch 1 over the data.
pub fn epoch_schedule(n: usize, spec: &BatchSpec) -> usize {
    n.div_ceil(spec.b1())
}

/// Batch-1 index sets for one epoch: a fresh permutation cut into chunks
/// of `b1`. A short final chunk is topped up from the start of the same
/// permutation, so each sample appears at least once per epoch.
pub fn epoch_draws<R: Rng + ?Sized>(n: usize, spec: &BatchSpec, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let b1 = spec.b1();
    if n < b1 {
        return Err(Error::Contract(format!("{n} samples cannot fill a batch of {b1}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Ok((0..epoch_schedule(n, spec))
        .map(|k| {
            let start = k * b1;
            let mut chunk: Vec<usize> = perm[start..(start + b1).min(n)].to_vec();
            let short = b1 - chunk.len();
            chunk.extend_from_slice(&perm[..short]);
            chunk
        })
        .collect())
}

/// Assembles one batch around a given batch-1 index set.
pub fn assemble_batch<R: Rng + ?Sized>(
    ds: &Dataset,
    spec: &BatchSpec,
    aug_sigma: f64,
    x1_index: Vec<usize>,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if x1_index.len() != spec.b1() {
        return Err(Error::Contract(format!(
            "batch 1 needs {} samples, got {}",
            spec.b1(),
            x1_index.len()
        )));
    }
    let l = ds.labeled.len();
    if l < spec.b2() {
        return Err(Error::Contract(format!(
            "{l} labeled samples cannot fill a labeled draw of {}",
            spec.b2()
        )));
    }
    let x1 = ds.features.select_rows(&x1_index)?;
    let x1_aug = augment(&x1, aug_sigma, rng);

    let draw = |rng: &mut R| -> Vec<usize> {
        index::sample(rng, l, spec.b2())
            .into_iter()
            .map(|k| ds.labeled[k])
            .collect()
    };
    let l1 = draw(rng);
    let l2 = draw(rng);

    let mut local: Vec<usize> = (0..spec.b1()).collect();
    local.shuffle(rng);
    let (first, second) = local.split_at(spec.b3());
    let split = first.iter().copied().zip(second.iter().copied()).collect();

    Ok(TrainingBatch {
        x1,
        x1_aug,
        x1_index,
        xl1: ds.features.select_rows(&l1)?,
        xl2: ds.features.select_rows(&l2)?,
        yl1: l1.iter().map(|&i| ds.labels[i]).collect(),
        yl2: l2.iter().map(|&i| ds.labels[i]).collect(),
        split,
    })
}

/// A stand-alone batch with batch 1 drawn uniformly without replacement.
pub fn build_batch<R: Rng + ?Sized>(ds: &Dataset, spec: &BatchSpec, aug_sigma: f64, rng: &mut R) -> Result<TrainingBatch> {
    if ds.len() < spec.b1() {
        return Err(Error::Contract(format!(
            "{} samples cannot fill a batch of {}",
            ds.len(),
            spec.b1()
        )));
    }
    let x1_index = index::sample(rng, ds.len(), spec.b1()).into_vec();
    assemble_batch(ds, spec, aug_sigma, x1_index, rng)
}
