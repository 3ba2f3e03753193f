//! Nearest neighbours of a few test points under the learned similarity
//! and under a Gaussian kernel on the raw inputs.

use graphssl::eval::{knn_query, Measure};
use graphssl::experiment::ExperimentConfig;
use graphssl::train;

fn main() -> graphssl::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/quick.json");
    let (cfg, _) = ExperimentConfig::from_file(path)?;
    let seed = cfg.seed(0);
    let (train_set, test_set) = cfg.dataset.build(seed)?;
    let (state, _) = train(&train_set, &cfg.train_config(seed))?;

    let k = cfg.eval.knn_k;
    let measures = [Measure::Learned, Measure::Gaussian { beta: 3.0 }];
    for target in [0, test_set.len() / 3, 2 * test_set.len() / 3] {
        let x = test_set.features.row(target);
        println!("target {target} at ({:+.2}, {:+.2}), class {}", x[0], x[1], test_set.labels[target]);
        for m in measures {
            let q = knn_query(&state, &test_set, target, k, m)?;
            let top: Vec<String> = q
                .neighbors
                .iter()
                .take(4)
                .map(|n| format!("{}:{:.3}", n.index, n.score))
                .collect();
            println!("  {m:?}: purity {:.2}, top {}", q.purity(&test_set.labels), top.join(" "));
        }
    }
    Ok(())
}
