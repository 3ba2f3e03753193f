mod common;

use common::{
    exhaustive_gradient_check, mlp, objective, pair_features, perturbed_outputs, random_instance,
    shadow_targets, small_arch, trace,
};
use graphssl::losses::loss_unsup;
use graphssl::nn::NoRng;
use graphssl::objective::{build_loss_graph, combined_loss};
use graphssl::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn combined_loss_matches_scalar_reference() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = 2 * rng.random_range(1..5);
        let b2 = rng.random_range(1..5);
        let latent = rng.random_range(3..9);
        let arch = graphssl::Architecture::with_widths(2, latent, 2, &[rng.random_range(2..10), 3], &[0.2, 0.0]);
        let inst = random_instance(seed, &arch, b1, b2);
        let reference = objective(&inst.state, &inst.batch, &shadow_targets(&inst.state, &inst.batch), inst.weights);
        let got = combined_loss(&inst.state, &inst.batch, inst.weights, 0.0, false, &mut NoRng).unwrap();
        assert!(
            (got.total - reference).abs() < 1e-10,
            "seed {seed}: {} vs {reference}",
            got.total
        );
        assert!((got.total - got.recompose()).abs() < 1e-12);
    }
}

#[test]
fn unit_weights_give_classical_laplacian() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let n = rng.random_range(1..30);
        let c = rng.random_range(2..6);
        let beta = rng.random_range(0.1..5.0);
        let a = Matrix::new(n, c, (0..n * c).map(|_| rng.random::<f64>()).collect()).unwrap();
        let b = Matrix::new(n, c, (0..n * c).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut lap = 0.0;
        for i in 0..n {
            for k in 0..c {
                lap += (a.get(i, k) - b.get(i, k)).powi(2);
            }
        }
        let v = loss_unsup(&a, &b, &vec![1.0; n], beta).unwrap();
        assert!((v - beta * lap / n as f64).abs() <= 1e-12);
    }
}

#[test]
fn fixed_target_graph_agrees_with_combined_loss() {
    let inst = random_instance(11, &small_arch(), 6, 3);
    let targets = common::to_matrix(&shadow_targets(&inst.state, &inst.batch));
    let g = build_loss_graph(&inst.state, &inst.batch, &targets, inst.weights, false, &mut NoRng).unwrap();
    let c = combined_loss(&inst.state, &inst.batch, inst.weights, 0.0, false, &mut NoRng).unwrap();
    assert_eq!(g.breakdown, c);
}

#[test]
fn local_perturbation_matches_a_full_forward_pass() {
    let inst = random_instance(11, &small_arch(), 4, 2);
    let feats = pair_features(&inst.state, &inst.batch);
    let t = trace(&inst.state.similarity, &feats.z);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let mut net = inst.state.similarity.clone();
        let layer = rng.random_range(0..net.layers.len());
        let bias = rng.random_bool(0.5);
        let m = if bias { &mut net.layers[layer].bias } else { &mut net.layers[layer].weight };
        let k = rng.random_range(0..m.len());
        let delta = rng.random_range(-0.5..0.5);
        m.data_mut()[k] += delta;
        let (local, _) = perturbed_outputs(&inst.state.similarity, &t, layer, bias, k, delta);
        for (z, p) in feats.z.iter().zip(&local) {
            for (a, b) in mlp(&net, z).iter().zip(p) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences_on_small_networks() {
    for seed in 0..10 {
        let inst = random_instance(seed, &small_arch(), 4, 2);
        let check = exhaustive_gradient_check(&inst, 1e-6);
        assert_eq!(check.checked, inst.state.trainable().map(Matrix::len).sum::<usize>());
        assert!(check.worst < 1e-4, "seed {seed}: worst {} at {:?}", check.worst, check.worst_at);
    }
}
