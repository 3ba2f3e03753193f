//! Trains the full method on two moons for one seed and reports test
//! error, the epoch curve, and the four moon-tip probes.
//!
//! ```text
//! cargo run --release --example two_moons [config.json]
//! ```

use graphssl::eval::{error_rate, moon_tip_probes};
use graphssl::experiment::ExperimentConfig;
use graphssl::train;

fn main() -> graphssl::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/two_moons.json").into());
    let (cfg, _) = ExperimentConfig::from_file(&path)?;
    let seed = cfg.seed(0);
    let (train_set, test_set) = cfg.dataset.build(seed)?;
    println!(
        "{}: {} samples, {} labeled, seed {seed}",
        cfg.name,
        train_set.len(),
        train_set.labeled.len()
    );

    let (state, log) = train(&train_set, &cfg.train_config(seed))?;
    for e in &log.epochs {
        println!("epoch {:>3}  sup_f {:.4}  total {:.4}", e.epoch, e.mean_sup_f, e.mean_total);
    }
    println!("test error {:.2}% after {:.1}s", error_rate(&state, &test_set)?, log.wall_seconds());

    let (probes, truth) = moon_tip_probes();
    let pred = state.predict(&probes)?;
    for (p, (&y, &t)) in probes.iter_rows().zip(pred.iter().zip(&truth)) {
        println!("probe ({:+.2}, {:+.2}): predicted {y}, true {t}", p[0], p[1]);
    }
    Ok(())
}
