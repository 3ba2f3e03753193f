//! Tape gradients of the joint objective against central differences,
//! sampled across every parameter matrix of a small model.

use graphssl::batching::build_batch;
use graphssl::nn::NoRng;
use graphssl::objective::{build_loss_graph, ema_targets};
use graphssl::{make_two_moons, select_labeled, Architecture, BatchSpec, LossWeights, ModelState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn main() -> graphssl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ds = select_labeled(&make_two_moons(200, 0.15, 7)?, 8, 7)?;
    let batch = build_batch(&ds, &BatchSpec::new(8, 4)?, 0.1, &mut rng)?;
    let state = ModelState::init(&Architecture::with_widths(2, 8, 2, &[16, 8], &[0.0, 0.0]), 7, 0.99)?;
    let weights = LossWeights {
        lambda1: 0.5,
        lambda2: 0.5,
        lambda3: 1.0,
        beta: 3.0,
    };
    let targets = ema_targets(&state, &batch, 0.0, false, &mut NoRng)?;
    let loss = |s: &ModelState| -> graphssl::Result<f64> {
        Ok(build_loss_graph(s, &batch, &targets, weights, false, &mut NoRng)?.breakdown.total)
    };

    let mut graph = build_loss_graph(&state, &batch, &targets, weights, false, &mut NoRng)?;
    let total = graph.total;
    graph.tape.backward(total)?;
    let grads = graph.gradients();

    let mut work = state.clone();
    for (pi, g) in grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for _ in 0..20.min(g.len()) {
            let k = rng.random_range(0..g.len());
            let orig = work.trainable().nth(pi).unwrap().data()[k];
            work.trainable_mut().nth(pi).unwrap().data_mut()[k] = orig + H;
            let up = loss(&work)?;
            work.trainable_mut().nth(pi).unwrap().data_mut()[k] = orig - H;
            let down = loss(&work)?;
            work.trainable_mut().nth(pi).unwrap().data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = g.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("parameter {pi:>2} {:>3}x{:<3} worst relative error {worst:.2e}", g.rows(), g.cols());
    }
    Ok(())
}
