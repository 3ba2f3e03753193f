use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use graphssl::experiment::{cmd_ablate, cmd_export_plots, cmd_run, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "graphssl", version, about = "Graph-based semi-supervised learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Number of seeds, overriding the config.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output root, overriding the config and GRAPHSSL_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the configured method on every seed.
    Run(RunArgs),
    /// Compare supervised-only, Π model and the full method on paired seeds.
    Ablate(RunArgs),
    /// Write decision-grid, similarity-matrix and training-curve data (plus SVGs) for a run directory.
    ExportPlots {
        /// A seed directory, or an experiment directory containing them.
        run_dir: PathBuf,
    },
}

impl RunArgs {
    fn load(&self) -> graphssl::Result<(ExperimentConfig, String, RunOptions)> {
        let (cfg, raw) = ExperimentConfig::from_file(&self.config)?;
        let opts = RunOptions {
            seeds: self.seeds,
            out: self.out.clone(),
            parallel: self.parallel,
        };
        Ok((cfg, raw, opts))
    }
}

fn run(cli: Cli) -> graphssl::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, raw, opts) = args.load()?;
            let s = cmd_run(&cfg, &raw, &opts)?;
            for r in &s.seeds {
                println!("seed {:>4}: test error {:.2}%", r.seed, r.error_rate);
            }
            let e = s.aggregate.error_rate;
            println!("{} ({}): {:.2} ± {:.2}% over {} seeds", s.experiment, s.method, e.mean, e.std, e.n);
        }
        Command::Ablate(args) => {
            let (cfg, raw, opts) = args.load()?;
            print!("{}", cmd_ablate(&cfg, &raw, &opts)?.render());
        }
        Command::ExportPlots { run_dir } => {
            for p in cmd_export_plots(&run_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
