//! Graph-based deep semi-supervised learning with a learned pairwise
//! similarity network.
//!
//! A feature network `f = h . g` and a similarity network are trained
//! jointly: class cross-entropy on labeled samples, similarity
//! cross-entropy on label-derived pairs, an extended Laplacian smoothness
//! term whose graph weights come from labels or from the similarity
//! network, and a consistency term against a moving-average copy of the
//! similarity network.

pub mod autodiff;
pub mod baselines;
pub mod batching;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod plots;
pub mod trainer;

pub use autodiff::{Tape, Var};
pub use batching::{BatchSpec, TrainingBatch};
pub use data::{make_two_circles, make_two_moons, select_labeled, Dataset};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossWeights};
pub use matrix::Matrix;
pub use nn::{Architecture, ModelState};
pub use objective::combined_loss;
pub use trainer::{train, TrainConfig};
