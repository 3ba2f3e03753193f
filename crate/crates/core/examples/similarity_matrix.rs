//! Learned and pseudo-label similarity matrices over a test subset,
//! their distance to the ideal block matrix, and heatmap SVGs.

use graphssl::eval::{mse_vs_ideal, pseudo_label_matrix, similarity_matrix};
use graphssl::experiment::ExperimentConfig;
use graphssl::plots::heatmap_svg;
use graphssl::train;

fn main() -> graphssl::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/quick.json");
    let (cfg, _) = ExperimentConfig::from_file(path)?;
    let seed = cfg.seed(0);
    let (train_set, test_set) = cfg.dataset.build(seed)?;
    let (state, _) = train(&train_set, &cfg.train_config(seed))?;

    let n = cfg.eval.similarity_size.min(test_set.len());
    let idx: Vec<usize> = (0..n).map(|i| i * test_set.len() / n).collect();
    let learned = similarity_matrix(&state, &test_set, &idx)?;
    let pseudo = pseudo_label_matrix(&state, &test_set, &idx)?;
    println!("mse vs ideal: learned {:.4}, pseudo-label {:.4}", mse_vs_ideal(&learned), mse_vs_ideal(&pseudo));

    let dir = std::env::temp_dir().join("graphssl-similarity");
    std::fs::create_dir_all(&dir)?;
    for (name, m) in [("learned", &learned), ("pseudo", &pseudo)] {
        let p = dir.join(format!("{name}.svg"));
        std::fs::write(&p, heatmap_svg(m))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}
