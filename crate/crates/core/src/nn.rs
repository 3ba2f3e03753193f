//! The feature network `f = h . g`, the pairwise similarity network and the
//! exponential-moving-average shadow of the similarity parameters.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Tape, Var};
use crate::error::{dim, Error, Result};
use crate::matrix::Matrix;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    None,
}

/// Layer widths from input to output, with one activation and one dropout
/// rate per affine layer. Dropout is applied after the activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout: Vec<f64>,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, dropout: Vec<f64>, head: Head) -> Result<Self> {
        let spec = Self {
            widths,
            activations,
            dropout,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.layers();
        if layers == 0 {
            return Err(Error::Parameter("an MLP needs at least one layer".into()));
        }
        if self.activations.len() != layers || self.dropout.len() != layers {
            return Err(Error::Parameter(format!(
                "{layers} layers but {} activations and {} dropout rates",
                self.activations.len(),
                self.dropout.len()
            )));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Parameter(format!("dropout rate {r} outside [0, 1)")));
        }
        if self.widths.contains(&0) {
            return Err(Error::Parameter("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }
}

/// Widths and activations of all three component networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `g`: input to latent features.
    pub encoder: MlpSpec,
    /// `h`: latent features to class probabilities.
    pub classifier: MlpSpec,
    /// Similarity network on concatenated latent pairs.
    pub similarity: MlpSpec,
}

impl Architecture {
    /// The 2-D toy configuration: `2 -> 100 -> c` feature network with
    /// leaky ReLU (0.1) and a `200 -> 512 -> 128 -> 64 -> 2` similarity
    /// network with dropout 0.2 after the first two hidden layers.
    pub fn toy(input_dim: usize, classes: usize) -> Self {
        Self::with_widths(input_dim, 100, classes, &[512, 128, 64], &[0.2, 0.2, 0.0])
    }

    /// Same layout as [`Architecture::toy`] with arbitrary widths.
    pub fn with_widths(input_dim: usize, latent: usize, classes: usize, sim_hidden: &[usize], sim_dropout: &[f64]) -> Self {
        let act = Activation::LeakyRelu(LEAKY_SLOPE);
        let mut widths = vec![2 * latent];
        widths.extend_from_slice(sim_hidden);
        widths.push(2);
        let mut activations = vec![act; sim_hidden.len()];
        activations.push(Activation::Identity);
        let mut dropout = sim_dropout.to_vec();
        dropout.resize(sim_hidden.len() + 1, 0.0);
        Self {
            encoder: MlpSpec {
                widths: vec![input_dim, latent],
                activations: vec![act],
                dropout: vec![0.0],
                head: Head::None,
            },
            classifier: MlpSpec {
                widths: vec![latent, classes],
                activations: vec![Activation::Identity],
                dropout: vec![0.0],
                head: Head::Softmax,
            },
            similarity: MlpSpec {
                widths,
                activations,
                dropout,
                head: Head::Softmax,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.classifier.validate()?;
        self.similarity.validate()?;
        let latent = self.encoder.output_dim();
        if self.classifier.input_dim() != latent {
            return Err(Error::Parameter(format!(
                "classifier input {} != latent width {latent}",
                self.classifier.input_dim()
            )));
        }
        if self.similarity.input_dim() != 2 * latent || self.similarity.output_dim() != 2 {
            return Err(Error::Parameter(format!(
                "similarity network must map {} -> 2",
                2 * latent
            )));
        }
        if self.classifier.head != Head::Softmax || self.similarity.head != Head::Softmax {
            return Err(Error::Parameter("classifier and similarity heads must be softmax".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `fan_in x fan_out`
    pub weight: Matrix,
    /// `1 x fan_out`
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

/// He-initialized parameters: weights `N(0, 2 / fan_in)`, zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<Mlp> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            Linear {
                weight: Matrix::new(fan_in, fan_out, data).expect("sized above"),
                bias: Matrix::zeros(1, fan_out),
            }
        })
        .collect();
    Ok(Mlp {
        spec: spec.clone(),
        layers,
    })
}

/// Tape handles for one MLP's parameters.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl BoundMlp {
    /// Parameter handles in the same order as [`Mlp::params`].
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.weights.iter().zip(&self.biases).flat_map(|(&w, &b)| [w, b])
    }
}

impl Mlp {
    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Matrix::len).sum()
    }

    /// Places the parameters on `tape`, trainable or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            if trainable {
                weights.push(tape.param(l.weight.clone()));
                biases.push(tape.param(l.bias.clone()));
            } else {
                weights.push(tape.constant(l.weight.clone()));
                biases.push(tape.constant(l.bias.clone()));
            }
        }
        BoundMlp { weights, biases }
    }

    /// Forward pass on a tape.
    pub fn forward_tape<R: Rng + ?Sized>(
        &self,
        bound: &BoundMlp,
        tape: &mut Tape,
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.spec.input_dim() {
            return Err(dim(
                "mlp forward",
                format!("input has {cols} columns, network expects {}", self.spec.input_dim()),
            ));
        }
        let mut h = x;
        for (i, (&w, &b)) in bound.weights.iter().zip(&bound.biases).enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if let Activation::LeakyRelu(slope) = self.spec.activations[i] {
                h = tape.leaky_relu(h, slope)?;
            }
            h = tape.dropout(h, self.spec.dropout[i], rng, training)?;
        }
        match self.spec.head {
            Head::Softmax => tape.softmax_rows(h),
            Head::None => Ok(h),
        }
    }

    /// Forward pass without recording anything. Evaluation mode, or
    /// `training` with dropout drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Matrix, training: bool, rng: &mut R) -> Result<Matrix> {
        if x.cols() != self.spec.input_dim() {
            return Err(dim(
                "mlp forward",
                format!("input has {} columns, network expects {}", x.cols(), self.spec.input_dim()),
            ));
        }
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut next = h.matmul(&l.weight)?;
            let bias = l.bias.data();
            let slope = match self.spec.activations[i] {
                Activation::LeakyRelu(s) => Some(s),
                Activation::Identity => None,
            };
            let rate = self.spec.dropout[i];
            let keep = 1.0 / (1.0 - rate);
            for r in 0..next.rows() {
                for (v, b) in next.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                    if let Some(s) = slope {
                        if *v <= 0.0 {
                            *v *= s;
                        }
                    }
                    if training && rate > 0.0 {
                        *v = if rng.random::<f64>() < rate { 0.0 } else { *v * keep };
                    }
                }
            }
            h = next;
        }
        if !h.is_finite() {
            return Err(Error::NonFinite { op: "mlp forward" });
        }
        Ok(match self.spec.head {
            Head::Softmax => softmax_rows(&h),
            Head::None => h,
        })
    }
}

/// Parameters of one trained model: `theta` = (encoder, classifier),
/// `alpha` = similarity network, `alpha_ema` = its moving average.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub encoder: Mlp,
    pub classifier: Mlp,
    pub similarity: Mlp,
    pub similarity_ema: Mlp,
    pub ema_decay: f64,
}

fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

impl ModelState {
    /// Fresh parameters; the EMA copy starts equal to the live similarity
    /// parameters.
    pub fn init(arch: &Architecture, seed: u64, ema_decay: f64) -> Result<Self> {
        arch.validate()?;
        if !(0.0..1.0).contains(&ema_decay) {
            return Err(Error::Parameter(format!("EMA decay {ema_decay} outside [0, 1)")));
        }
        let similarity = init_params(&arch.similarity, sub_seed(seed, 3))?;
        Ok(Self {
            encoder: init_params(&arch.encoder, sub_seed(seed, 1))?,
            classifier: init_params(&arch.classifier, sub_seed(seed, 2))?,
            similarity_ema: similarity.clone(),
            similarity,
            ema_decay,
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            encoder: self.encoder.spec.clone(),
            classifier: self.classifier.spec.clone(),
            similarity: self.similarity.spec.clone(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier.spec.output_dim()
    }

    /// Feature-network parameters (`theta`): encoder then classifier.
    pub fn theta(&self) -> impl Iterator<Item = &Matrix> {
        self.encoder.params().chain(self.classifier.params())
    }

    /// `theta` followed by the live similarity parameters `alpha`.
    pub fn trainable(&self) -> impl Iterator<Item = &Matrix> {
        self.theta().chain(self.similarity.params())
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.encoder
            .params_mut()
            .chain(self.classifier.params_mut())
            .chain(self.similarity.params_mut())
    }

    /// Returns `(Z, F)`: latent features `g(X)` and class probabilities
    /// `softmax(h(Z))`.
    pub fn feature_forward<R: Rng + ?Sized>(&self, x: &Matrix, training: bool, rng: &mut R) -> Result<(Matrix, Matrix)> {
        let z = self.encoder.forward(x, training, rng)?;
        let f = self.classifier.forward(&z, training, rng)?;
        Ok((z, f))
    }

    /// Class probabilities in evaluation mode.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let mut rng = NoRng;
        Ok(self.feature_forward(x, false, &mut rng)?.1)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.argmax_rows())
    }

    /// Similarity-network output `[W, 1 - W]` for the row-aligned pairs
    /// `(zi[k], zj[k])`. With `use_ema` the shadow parameters are used.
    pub fn similarity_forward<R: Rng + ?Sized>(
        &self,
        zi: &Matrix,
        zj: &Matrix,
        use_ema: bool,
        training: bool,
        rng: &mut R,
    ) -> Result<Matrix> {
        if zi.shape() != zj.shape() {
            return Err(dim(
                "similarity_forward",
                format!("pair sides {:?} vs {:?}", zi.shape(), zj.shape()),
            ));
        }
        let net = if use_ema { &self.similarity_ema } else { &self.similarity };
        net.forward(&zi.hstack(zj)?, training, rng)
    }

    /// `alpha_ema <- decay * alpha_ema + (1 - decay) * alpha`.
    pub fn ema_update(&mut self, decay: f64) -> Result<()> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Parameter(format!("EMA decay {decay} outside [0, 1)")));
        }
        for (shadow, live) in self.similarity_ema.params_mut().zip(self.similarity.params()) {
            for (s, &a) in shadow.data_mut().iter_mut().zip(live.data()) {
                *s = decay * *s + (1.0 - decay) * a;
            }
        }
        Ok(())
    }

    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (prefix, net) in [
            ("theta.g", &self.encoder),
            ("theta.h", &self.classifier),
            ("alpha", &self.similarity),
            ("alpha_ema", &self.similarity_ema),
        ] {
            for (i, l) in net.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), &l.weight));
                out.push((format!("{prefix}.{i}.bias"), &l.bias));
            }
        }
        out
    }

    /// Binary dump: magic, version, JSON architecture header, then named
    /// matrices as little-endian `f64`. Loading restores every bit.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&ModelHeader {
            architecture: self.architecture(),
            ema_decay: self.ema_decay,
        })?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let named = self.named_params();
        w.write_all(&(named.len() as u32).to_le_bytes())?;
        for (name, m) in named {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header_len = read_u64(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: ModelHeader = serde_json::from_slice(&header)?;
        let mut state = Self::init(&header.architecture, 0, header.ema_decay)?;

        let count = read_u32(&mut r)? as usize;
        let mut seen = std::collections::HashMap::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            seen.insert(name, Matrix::new(rows, cols, data)?);
        }
        let names: Vec<String> = state.named_params().into_iter().map(|(n, _)| n).collect();
        let targets = state
            .encoder
            .params_mut()
            .chain(state.classifier.params_mut())
            .chain(state.similarity.params_mut())
            .chain(state.similarity_ema.params_mut());
        for (name, slot) in names.iter().zip(targets) {
            let m = seen
                .remove(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if m.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m;
        }
        if let Some(extra) = seen.keys().next() {
            return Err(Error::Format(format!("unexpected parameter {extra}")));
        }
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

const MODEL_MAGIC: &[u8; 8] = b"GSSLMODL";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    architecture: Architecture,
    ema_decay: f64,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// An rng for code paths that must not draw randomness (evaluation mode).
/// Drawing from it panics.
pub struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        panic!("evaluation-mode forward pass drew randomness")
    }

    fn next_u64(&mut self) -> u64 {
        panic!("evaluation-mode forward pass drew randomness")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        panic!("evaluation-mode forward pass drew randomness")
    }
}
