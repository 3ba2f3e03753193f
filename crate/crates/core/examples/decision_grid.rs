//! Class probabilities over a lattice around the training data, saved as
//! CSV and as an SVG of the decision boundary.

use graphssl::eval::{decision_grid, Bounds};
use graphssl::experiment::ExperimentConfig;
use graphssl::plots::boundary_svg;
use graphssl::train;

fn main() -> graphssl::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/quick.json");
    let (cfg, _) = ExperimentConfig::from_file(path)?;
    let seed = cfg.seed(0);
    let (train_set, _) = cfg.dataset.build(seed)?;
    let (state, _) = train(&train_set, &cfg.train_config(seed))?;

    let grid = decision_grid(&state, Bounds::around(&train_set.features, 0.5), cfg.eval.grid_resolution)?;
    let dir = std::env::temp_dir().join("graphssl-grid");
    std::fs::create_dir_all(&dir)?;
    grid.save_csv(dir.join("decision_grid.csv"))?;
    std::fs::write(dir.join("boundary.svg"), boundary_svg(&grid, &train_set))?;

    let class1 = grid.probs.iter_rows().filter(|p| p[1] > p[0]).count();
    println!(
        "{}x{} grid, {class1} points assigned class 1, written to {}",
        grid.resolution,
        grid.resolution,
        dir.display()
    );
    Ok(())
}
