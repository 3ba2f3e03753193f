//! Straight-line scalar reference for the joint objective, written without
//! the tape or the matrix type: plain loops over `f64`.

#![allow(dead_code)]

use graphssl::batching::TrainingBatch;
use graphssl::data::{make_two_moons, select_labeled};
use graphssl::losses::LossWeights;
use graphssl::matrix::Matrix;
use graphssl::nn::{Activation, Head, Linear, Mlp, ModelState};
use graphssl::{Architecture, BatchSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FLOOR: f64 = 1e-12;

pub fn row(m: &Matrix, r: usize) -> Vec<f64> {
    (0..m.cols()).map(|c| m.get(r, c)).collect()
}

fn pre_activation(layer: &Linear, h: &[f64]) -> Vec<f64> {
    let (fan_in, fan_out) = (layer.weight.rows(), layer.weight.cols());
    assert_eq!(h.len(), fan_in);
    (0..fan_out)
        .map(|o| {
            let mut acc = layer.bias.get(0, o);
            for (k, hk) in h.iter().enumerate() {
                acc += hk * layer.weight.get(k, o);
            }
            acc
        })
        .collect()
}

fn activate(net: &Mlp, layer: usize, v: f64) -> f64 {
    match net.spec.activations[layer] {
        Activation::LeakyRelu(s) if v <= 0.0 => v * s,
        _ => v,
    }
}

fn head(net: &Mlp, h: Vec<f64>) -> Vec<f64> {
    if net.spec.head != Head::Softmax {
        return h;
    }
    let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = h.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Evaluation-mode forward pass of one network on one input vector.
pub fn mlp(net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, layer) in net.layers.iter().enumerate() {
        h = pre_activation(layer, &h).into_iter().map(|v| activate(net, i, v)).collect();
    }
    head(net, h)
}

/// Per-layer pre-activations and outputs of one network on several inputs.
pub struct Trace {
    /// `acts[l]` feeds layer `l`; `acts[layers]` is the output before the head.
    pub acts: Vec<Vec<Vec<f64>>>,
    pub pre: Vec<Vec<Vec<f64>>>,
}

pub fn trace(net: &Mlp, inputs: &[Vec<f64>]) -> Trace {
    let mut acts = vec![inputs.to_vec()];
    let mut pre = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        let p: Vec<Vec<f64>> = acts[l].iter().map(|h| pre_activation(layer, h)).collect();
        acts.push(p.iter().map(|r| r.iter().map(|&v| activate(net, l, v)).collect()).collect());
        pre.push(p);
    }
    Trace { acts, pre }
}

fn kinked(net: &Mlp, layer: usize, a: f64, b: f64) -> bool {
    matches!(net.spec.activations[layer], Activation::LeakyRelu(_)) && (a <= 0.0) != (b <= 0.0)
}

/// Network outputs after adding `delta` to entry `k` of layer `l`'s weight
/// (or bias), recomputing only the units that entry reaches. The flag is
/// set when some leaky unit changed side, i.e. the step crossed a kink.
pub fn perturbed_outputs(net: &Mlp, t: &Trace, l: usize, bias: bool, k: usize, delta: f64) -> (Vec<Vec<f64>>, bool) {
    let layers = net.layers.len();
    let cols = net.layers[l].weight.cols();
    let (i, j) = if bias { (0, k) } else { (k / cols, k % cols) };
    let mut crossed = false;
    let out = (0..t.acts[0].len())
        .map(|r| {
            let input = if bias { 1.0 } else { t.acts[l][r][i] };
            let pre = t.pre[l][r][j] + delta * input;
            crossed |= kinked(net, l, pre, t.pre[l][r][j]);
            let mut h = t.acts[l + 1][r].clone();
            h[j] = activate(net, l, pre);
            if l + 1 < layers {
                let dj = h[j] - t.acts[l + 1][r][j];
                let next = &net.layers[l + 1];
                h = t.pre[l + 1][r]
                    .iter()
                    .enumerate()
                    .map(|(o, &v)| {
                        let p = v + dj * next.weight.get(j, o);
                        crossed |= kinked(net, l + 1, p, v);
                        activate(net, l + 1, p)
                    })
                    .collect();
                for m in l + 2..layers {
                    let pre = pre_activation(&net.layers[m], &h);
                    crossed |= pre.iter().zip(&t.pre[m][r]).any(|(&a, &b)| kinked(net, m, a, b));
                    h = pre.into_iter().map(|v| activate(net, m, v)).collect();
                }
            }
            head(net, h)
        })
        .collect();
    (out, crossed)
}

/// Which side of zero every leaky unit sits on, over every forward pass
/// the objective makes.
pub fn activation_pattern(state: &ModelState, batch: &TrainingBatch) -> Vec<bool> {
    let mut out = Vec::new();
    let mut record = |net: &Mlp, x: &[f64]| {
        let mut h = x.to_vec();
        for (l, layer) in net.layers.iter().enumerate() {
            let pre = pre_activation(layer, &h);
            if matches!(net.spec.activations[l], Activation::LeakyRelu(_)) {
                out.extend(pre.iter().map(|&v| v <= 0.0));
            }
            h = pre.into_iter().map(|v| activate(net, l, v)).collect();
        }
        h
    };
    for x in [&batch.xl1, &batch.xl2] {
        for k in 0..x.rows() {
            let z = record(&state.encoder, &row(x, k));
            record(&state.classifier, &z);
        }
    }
    for (a, b) in pairs(batch) {
        let za = record(&state.encoder, &a);
        record(&state.classifier, &za);
        let zb = record(&state.encoder, &b);
        record(&state.classifier, &zb);
        record(&state.similarity, &[za, zb].concat());
    }
    out
}

pub fn features(state: &ModelState, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let z = mlp(&state.encoder, x);
    let f = mlp(&state.classifier, &z);
    (z, f)
}

pub fn similarity(net: &Mlp, zi: &[f64], zj: &[f64]) -> Vec<f64> {
    let mut input = zi.to_vec();
    input.extend_from_slice(zj);
    mlp(net, &input)
}

fn clamp_ln(p: f64) -> f64 {
    p.clamp(FLOOR, 1.0 - FLOOR).ln()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unsup_pair(fi: &[f64], fj: &[f64], w: f64, beta: f64) -> f64 {
    let d2 = dist2(fi, fj);
    let gap = (1.0 - (-beta * d2).exp()).clamp(FLOOR, 1.0);
    beta * w * d2 - (1.0 - w) * gap.ln()
}

/// The sample pairs of a batch in child-batch order, as input vectors.
pub fn pairs(batch: &TrainingBatch) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    for k in 0..batch.x1.rows() {
        out.push((row(&batch.x1, k), row(&batch.x1_aug, k)));
    }
    for k in 0..batch.xl1.rows() {
        out.push((row(&batch.xl1, k), row(&batch.xl2, k)));
    }
    for &(a, b) in &batch.split {
        out.push((row(&batch.x1, a), row(&batch.x1, b)));
    }
    out
}

/// Shadow-network targets on the clean pair inputs (no augmentation, no
/// dropout).
pub fn shadow_targets(state: &ModelState, batch: &TrainingBatch) -> Vec<Vec<f64>> {
    pairs(batch)
        .iter()
        .map(|(a, b)| {
            let (za, _) = features(state, a);
            let (zb, _) = features(state, b);
            similarity(&state.similarity_ema, &za, &zb)
        })
        .collect()
}

/// Classifier outputs and similarity inputs of one batch, everything the
/// objective needs besides the similarity outputs.
pub struct PairFeatures {
    /// Outputs on the labeled inputs with their labels.
    pub labeled: Vec<(Vec<f64>, usize)>,
    /// Outputs on both sides of each pair.
    pub f: Vec<(Vec<f64>, Vec<f64>)>,
    /// Concatenated latent codes of each pair.
    pub z: Vec<Vec<f64>>,
}

pub fn pair_features(state: &ModelState, batch: &TrainingBatch) -> PairFeatures {
    let mut labeled = Vec::new();
    for (x, y) in [(&batch.xl1, &batch.yl1), (&batch.xl2, &batch.yl2)] {
        for k in 0..x.rows() {
            labeled.push((features(state, &row(x, k)).1, y[k]));
        }
    }
    let mut f = Vec::new();
    let mut z = Vec::new();
    for (a, b) in pairs(batch) {
        let (za, fa) = features(state, &a);
        let (zb, fb) = features(state, &b);
        f.push((fa, fb));
        z.push([za, zb].concat());
    }
    PairFeatures { labeled, f, z }
}

/// The weighted objective given the batch's features and the similarity
/// outputs `p` of its pairs.
pub fn objective_parts(
    batch: &TrainingBatch,
    feats: &PairFeatures,
    p: &[Vec<f64>],
    targets: &[Vec<f64>],
    w: LossWeights,
) -> f64 {
    let (b1, b2, b3) = (batch.x1.rows(), batch.xl1.rows(), batch.split.len());

    let mut sup_f = 0.0;
    for (f, y) in &feats.labeled {
        for (c, fc) in f.iter().enumerate() {
            let t = if c == *y { 1.0 } else { 0.0 };
            sup_f -= t * clamp_ln(*fc);
        }
    }

    let mut sup_w = 0.0;
    let mut unsup_lab = 0.0;
    let mut unsup_unl = 0.0;
    let mut cons = 0.0;
    for (k, ((fa, fb), pk)) in feats.f.iter().zip(p).enumerate() {
        let target_w = if k < b1 {
            Some(1.0)
        } else if k < b1 + b2 {
            let j = k - b1;
            Some(if batch.yl1[j] == batch.yl2[j] { 1.0 } else { 0.0 })
        } else {
            None
        };
        match target_w {
            Some(t) => {
                sup_w -= t * clamp_ln(pk[0]) + (1.0 - t) * clamp_ln(pk[1]);
                unsup_lab += unsup_pair(fa, fb, t, w.beta);
            }
            None => unsup_unl += unsup_pair(fa, fb, pk[0], w.beta),
        }
        cons += dist2(pk, &targets[k]);
    }

    (sup_f + sup_w) / (b1 + 2 * b2) as f64
        + w.lambda1 * unsup_lab / (b1 + b2) as f64
        + w.lambda2 * unsup_unl / b3 as f64
        + w.lambda3 * cons / (b1 + b2 + b3) as f64
}

/// The weighted objective for one batch with fixed consistency targets.
pub fn objective(state: &ModelState, batch: &TrainingBatch, targets: &[Vec<f64>], w: LossWeights) -> f64 {
    let feats = pair_features(state, batch);
    let p: Vec<Vec<f64>> = feats.z.iter().map(|z| mlp(&state.similarity, z)).collect();
    objective_parts(batch, &feats, &p, targets, w)
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

/// A random small problem: model with distinct live and shadow similarity
/// parameters, one batch, and positive coefficients.
pub struct Instance {
    pub state: ModelState,
    pub batch: TrainingBatch,
    pub weights: LossWeights,
}

pub fn random_instance(seed: u64, arch: &Architecture, b1: usize, b2: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = select_labeled(&make_two_moons(64, 0.15, seed).unwrap(), 8, seed).unwrap();
    let batch = graphssl::batching::build_batch(&ds, &BatchSpec::new(b1, b2).unwrap(), 0.05, &mut rng).unwrap();
    let mut state = ModelState::init(arch, seed, 0.99).unwrap();
    let other = ModelState::init(arch, seed + 7919, 0.99).unwrap();
    state.similarity_ema = other.similarity;
    // non-zero biases so every parameter matters
    for p in state.trainable_mut() {
        if p.rows() == 1 {
            for v in p.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let weights = LossWeights {
        lambda1: rng.random_range(0.1..2.0),
        lambda2: rng.random_range(0.1..2.0),
        lambda3: rng.random_range(0.1..2.0),
        beta: rng.random_range(0.5..4.0),
    };
    Instance { state, batch, weights }
}

/// Small networks with the same layer layout as the toy architecture.
pub fn small_arch() -> Architecture {
    Architecture::with_widths(2, 10, 2, &[16, 8, 4], &[0.2, 0.2, 0.0])
}

/// Outcome of comparing tape gradients with central differences.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub struct GradCheck {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: (usize, usize),
    /// Entries whose step had to shrink below [`FD_STEPS`]`[0]` to stay
    /// off a kink.
    pub shrunk: usize,
}

/// Central-difference steps, tried in order until neither side of the
/// difference crosses a leaky-ReLU kink.
pub const FD_STEPS: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];

/// Every parameter entry against central differences. Feature-network
/// entries re-evaluate the whole objective; similarity-network entries keep
/// the fixed features and recompute only the similarity units they reach.
pub fn exhaustive_gradient_check(inst: &Instance, floor: f64) -> GradCheck {
    use graphssl::nn::NoRng;
    use graphssl::objective::build_loss_graph;

    let targets = shadow_targets(&inst.state, &inst.batch);
    let tmat = to_matrix(&targets);
    let mut graph = build_loss_graph(&inst.state, &inst.batch, &tmat, inst.weights, false, &mut NoRng).unwrap();
    let total = graph.total;
    graph.tape.backward(total).unwrap();
    let grads = graph.gradients();

    let mut out = GradCheck {
        checked: 0,
        worst: 0.0,
        worst_at: (0, 0),
        shrunk: 0,
    };
    // `eval(h)` gives the objective at `+h` and `-h` and whether either crossed a kink
    let mut check = |pi: usize, k: usize, analytic: f64, eval: &mut dyn FnMut(f64) -> (f64, f64, bool)| {
        let mut numeric = 0.0;
        for (n, &h) in FD_STEPS.iter().enumerate() {
            let (up, down, crossed) = eval(h);
            numeric = (up - down) / (2.0 * h);
            if !crossed {
                if n > 0 {
                    out.shrunk += 1;
                }
                break;
            }
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        out.checked += 1;
        if rel > out.worst {
            out.worst = rel;
            out.worst_at = (pi, k);
        }
    };

    let feature_params = inst.state.theta().count();
    let base_pattern = activation_pattern(&inst.state, &inst.batch);
    let mut state = inst.state.clone();
    for (pi, g) in grads.iter().enumerate().take(feature_params) {
        for k in 0..g.len() {
            let orig = state.trainable().nth(pi).unwrap().data()[k];
            let mut at = |v: f64| {
                state.trainable_mut().nth(pi).unwrap().data_mut()[k] = v;
                let f = objective(&state, &inst.batch, &targets, inst.weights);
                (f, activation_pattern(&state, &inst.batch) != base_pattern)
            };
            let mut eval = |h: f64| {
                let ((up, cu), (down, cd)) = (at(orig + h), at(orig - h));
                (up, down, cu || cd)
            };
            check(pi, k, g.data()[k], &mut eval);
            state.trainable_mut().nth(pi).unwrap().data_mut()[k] = orig;
        }
    }

    let feats = pair_features(&inst.state, &inst.batch);
    let net = &inst.state.similarity;
    let t = trace(net, &feats.z);
    for (si, g) in grads[feature_params..].iter().enumerate() {
        let (layer, bias) = (si / 2, si % 2 == 1);
        for k in 0..g.len() {
            let mut eval = |h: f64| {
                let (pu, cu) = perturbed_outputs(net, &t, layer, bias, k, h);
                let (pd, cd) = perturbed_outputs(net, &t, layer, bias, k, -h);
                let up = objective_parts(&inst.batch, &feats, &pu, &targets, inst.weights);
                let down = objective_parts(&inst.batch, &feats, &pd, &targets, inst.weights);
                (up, down, cu || cd)
            };
            check(feature_params + si, k, g.data()[k], &mut eval);
        }
    }
    out
}
