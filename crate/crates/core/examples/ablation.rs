//! Supervised-only, Π model and the full method on paired seeds, written
//! as an ablation table under the system temp directory.
//!
//! ```text
//! cargo run --release --example ablation [config.json]
//! ```

use graphssl::experiment::{cmd_ablate, ExperimentConfig, RunOptions};

fn main() -> graphssl::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/quick.json").into());
    let (cfg, raw) = ExperimentConfig::from_file(&path)?;
    let out = std::env::temp_dir().join("graphssl-ablation");
    let opts = RunOptions {
        out: Some(out.clone()),
        parallel: 1,
        ..Default::default()
    };
    let table = cmd_ablate(&cfg, &raw, &opts)?;
    print!("{}", table.render());
    println!("artifacts in {}", out.join(&cfg.name).display());
    Ok(())
}
