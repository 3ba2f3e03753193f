//! The full method against supervised-only training on two concentric
//! circles, paired on the same seed.
//!
//! ```text
//! cargo run --release --example two_circles [config.json]
//! ```

use graphssl::baselines::{train_baseline, BaselineKind};
use graphssl::eval::error_rate;
use graphssl::experiment::ExperimentConfig;

fn main() -> graphssl::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/two_circles.json").into());
    let (cfg, _) = ExperimentConfig::from_file(&path)?;
    let seed = cfg.seed(0);
    let (train_set, test_set) = cfg.dataset.build(seed)?;

    for kind in [BaselineKind::SupervisedOnly, BaselineKind::FullMethod] {
        let (state, log) = train_baseline(&train_set, kind, &cfg.train_config(seed))?;
        println!(
            "{kind:<16} test error {:>6.2}%  ({:.1}s)",
            error_rate(&state, &test_set)?,
            log.wall_seconds()
        );
    }
    Ok(())
}
