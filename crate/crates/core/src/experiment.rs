//! Config-driven experiment runs: multi-seed sweeps, the three-way
//! ablation and plot-data export.
//!
//! Output layout for an experiment named `exp`:
//!
//! ```text
//! <out>/exp/config.json            verbatim copy of the config file
//! <out>/exp/summary.json           per-seed rows plus mean and std
//! <out>/exp/<seed>/config.json
//! <out>/exp/<seed>/train_log.csv   one row per optimization step
//! <out>/exp/<seed>/epochs.json     per-epoch means and wall time
//! <out>/exp/<seed>/model.bin
//! <out>/exp/<seed>/eval/*.csv
//! <out>/exp/<seed>/summary.json
//! ```
//!
//! An ablation nests one such tree per method under `<out>/exp/<method>/`
//! and adds `ablation.csv` and `ablation.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{train_baseline, BaselineKind};
use crate::data::{make_two_circles, make_two_moons, select_labeled, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    decision_grid, error_rate, knn_query, moon_tip_probes, mse_vs_ideal, pseudo_label_matrix, similarity_matrix, Bounds,
    Measure, QueryResult, SimilarityMatrix,
};
use crate::nn::ModelState;
use crate::plots;
use crate::trainer::{TrainConfig, TrainLog};

/// Overrides the configured output root when set (the `--out` flag wins).
pub const OUT_ENV: &str = "GRAPHSSL_OUT";

/// Offset between a seed's training-set seed and its test-set seed.
const TEST_SEED_OFFSET: u64 = 1_000_003;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    TwoMoons,
    TwoCircles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetName,
    pub n: usize,
    pub sigma: f64,
    /// Labeled samples, split evenly over the classes.
    pub labeled: usize,
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    /// Seed `i` of a sweep uses `base_seed + i` for the data, the labeled
    /// split and the initialization.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_test_n() -> usize {
    2000
}

fn default_seeds() -> usize {
    5
}

impl DatasetConfig {
    fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self.name {
            DatasetName::TwoMoons => make_two_moons(n, self.sigma, seed),
            DatasetName::TwoCircles => make_two_circles(n, self.sigma, seed),
        }
    }

    /// Training set (with labeled subset) and test set for one seed.
    pub fn build(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let train = select_labeled(&self.generate(self.n, seed)?, self.labeled, seed)?;
        let test = self.generate(self.test_n, seed.wrapping_add(TEST_SEED_OFFSET))?;
        Ok((train, test))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Test samples in the similarity matrix.
    pub similarity_size: usize,
    pub knn_k: usize,
    pub knn_queries: usize,
    pub grid_resolution: usize,
    /// Defaults to the training data's bounding box plus a margin.
    #[serde(default)]
    pub grid_bounds: Option<Bounds>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            similarity_size: 200,
            knn_k: 9,
            knn_queries: 20,
            grid_resolution: 100,
            grid_bounds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    #[serde(default = "default_method")]
    pub method: BaselineKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_method() -> BaselineKind {
    BaselineKind::FullMethod
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: name.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| field("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, returning it with its raw text.
    pub fn from_file(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let text = fs::read_to_string(path)?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(field("name", "must be a plain directory name"));
        }
        let d = &self.dataset;
        if d.n == 0 || d.n % 2 != 0 {
            return Err(field("dataset.n", "must be a positive even count"));
        }
        if d.test_n == 0 || d.test_n % 2 != 0 {
            return Err(field("dataset.test_n", "must be a positive even count"));
        }
        if !(d.sigma >= 0.0 && d.sigma.is_finite()) {
            return Err(field("dataset.sigma", "must be non-negative"));
        }
        if d.labeled == 0 || d.labeled % 2 != 0 || d.labeled > d.n {
            return Err(field("dataset.labeled", "must be a positive even count no larger than n"));
        }
        if d.seeds == 0 {
            return Err(field("dataset.seeds", "must be positive"));
        }
        if d.labeled < self.train.spec.b2() {
            return Err(field(
                "train.spec",
                format!("labeled draws of {} exceed the {} labels", self.train.spec.b2(), d.labeled),
            ));
        }
        if d.n < self.train.spec.b1() {
            return Err(field("train.spec", "batch 1 is larger than the dataset"));
        }
        self.train.validate().map_err(|e| match e {
            Error::Config { field: f, message } => field(&format!("train.{f}"), message),
            other => other,
        })?;
        let e = &self.eval;
        if e.similarity_size == 0 || e.similarity_size > d.test_n {
            return Err(field("eval.similarity_size", "must be between 1 and test_n"));
        }
        if e.knn_k == 0 || e.knn_k >= d.test_n {
            return Err(field("eval.knn_k", "must be between 1 and test_n - 1"));
        }
        if e.knn_queries > d.test_n {
            return Err(field("eval.knn_queries", "cannot exceed test_n"));
        }
        if e.grid_resolution == 0 {
            return Err(field("eval.grid_resolution", "must be positive"));
        }
        if let Some(b) = e.grid_bounds {
            if !(b.x_min < b.x_max && b.y_min < b.y_max) {
                return Err(field("eval.grid_bounds", "must have min < max on both axes"));
            }
        }
        Ok(())
    }

    pub fn seed(&self, index: usize) -> u64 {
        self.dataset.base_seed + index as u64
    }

    /// The training config for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seeds: Option<usize>,
    pub out: Option<PathBuf>,
    pub parallel: usize,
}

impl RunOptions {
    fn output_root(&self, cfg: &ExperimentConfig) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => cfg.output_dir.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub method: BaselineKind,
    pub error_rate: f64,
    /// Learned-similarity metrics; absent for methods without a trained
    /// similarity network.
    pub mse_learned: Option<f64>,
    pub mse_pseudo: f64,
    pub knn_purity: Option<f64>,
    pub mean_w_same: Option<f64>,
    pub mean_w_diff: Option<f64>,
    /// Moon-tip probes classified correctly (two-moons runs only).
    pub tips_correct: Option<usize>,
    pub tips_total: Option<usize>,
    pub steps: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub error_rate: MeanStd,
    pub mse_learned: Option<MeanStd>,
    pub mse_pseudo: MeanStd,
    pub knn_purity: Option<MeanStd>,
    pub wall_seconds: MeanStd,
}

impl Aggregate {
    pub fn from_seeds(rows: &[SeedSummary]) -> Self {
        let opt = |f: fn(&SeedSummary) -> Option<f64>| -> Option<MeanStd> {
            let v: Option<Vec<f64>> = rows.iter().map(f).collect();
            v.filter(|v| !v.is_empty()).map(|v| MeanStd::of(&v))
        };
        let col = |f: fn(&SeedSummary) -> f64| MeanStd::of(&rows.iter().map(f).collect::<Vec<_>>());
        Self {
            error_rate: col(|r| r.error_rate),
            mse_learned: opt(|r| r.mse_learned),
            mse_pseudo: col(|r| r.mse_pseudo),
            knn_purity: opt(|r| r.knn_purity),
            wall_seconds: col(|r| r.wall_seconds),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub method: BaselineKind,
    pub seeds: Vec<SeedSummary>,
    pub aggregate: Aggregate,
}

impl RunSummary {
    pub fn new(experiment: &str, method: BaselineKind, seeds: Vec<SeedSummary>) -> Self {
        Self {
            experiment: experiment.into(),
            method,
            aggregate: Aggregate::from_seeds(&seeds),
            seeds,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Evenly spaced test-set indices.
fn spread(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| i * n / m).collect()
}

/// Evaluation artifacts of one trained model.
pub struct Evaluation {
    pub summary: SeedSummary,
    pub learned: Option<SimilarityMatrix>,
    pub pseudo: SimilarityMatrix,
    pub queries: Vec<QueryResult>,
}

/// Scores a trained model on the seed's test set.
pub fn evaluate(
    cfg: &ExperimentConfig,
    method: BaselineKind,
    seed: u64,
    state: &ModelState,
    test: &Dataset,
    log: &TrainLog,
) -> Result<Evaluation> {
    let idx = spread(test.len(), cfg.eval.similarity_size);
    let pseudo = pseudo_label_matrix(state, test, &idx)?;
    let mut summary = SeedSummary {
        seed,
        method,
        error_rate: error_rate(state, test)?,
        mse_learned: None,
        mse_pseudo: mse_vs_ideal(&pseudo),
        knn_purity: None,
        mean_w_same: None,
        mean_w_diff: None,
        tips_correct: None,
        tips_total: None,
        steps: log.rows.len(),
        wall_seconds: log.wall_seconds(),
    };
    if cfg.dataset.name == DatasetName::TwoMoons {
        let (x, y) = moon_tip_probes();
        let pred = state.predict(&x)?;
        summary.tips_correct = Some(pred.iter().zip(&y).filter(|(p, t)| p == t).count());
        summary.tips_total = Some(y.len());
    }
    let mut learned = None;
    let mut queries = Vec::new();
    if method == BaselineKind::FullMethod {
        let s = similarity_matrix(state, test, &idx)?;
        let (same, diff) = s.class_means();
        summary.mse_learned = Some(mse_vs_ideal(&s));
        summary.mean_w_same = Some(same);
        summary.mean_w_diff = Some(diff);
        for target in spread(test.len(), cfg.eval.knn_queries) {
            queries.push(knn_query(state, test, target, cfg.eval.knn_k, Measure::Learned)?);
        }
        if !queries.is_empty() {
            let p: f64 = queries.iter().map(|q| q.purity(&test.labels)).sum();
            summary.knn_purity = Some(p / queries.len() as f64);
        }
        learned = Some(s);
    }
    Ok(Evaluation {
        summary,
        learned,
        pseudo,
        queries,
    })
}

fn grid_bounds(cfg: &ExperimentConfig, train: &Dataset) -> Bounds {
    cfg.eval.grid_bounds.unwrap_or_else(|| Bounds::around(&train.features, 0.5))
}

/// Trains and evaluates one seed, writing its directory.
fn run_seed(cfg: &ExperimentConfig, raw: &str, method: BaselineKind, seed: u64, dir: &Path) -> Result<SeedSummary> {
    let (train, test) = cfg.dataset.build(seed)?;
    let tcfg = cfg.train_config(seed);
    fs::create_dir_all(dir.join("eval"))?;
    fs::write(dir.join("config.json"), raw)?;
    let start = Instant::now();
    let (state, log) = train_baseline(&train, method, &tcfg)?;
    let wall = start.elapsed().as_secs_f64();
    log.save_csv(dir.join("train_log.csv"))?;
    log.save_epochs_json(dir.join("epochs.json"))?;
    state.save(dir.join("model.bin"))?;

    let mut ev = evaluate(cfg, method, seed, &state, &test, &log)?;
    ev.summary.wall_seconds = wall;
    let eval_dir = dir.join("eval");
    if state.encoder.spec.input_dim() == 2 {
        decision_grid(&state, grid_bounds(cfg, &train), cfg.eval.grid_resolution)?
            .save_csv(eval_dir.join("decision_grid.csv"))?;
    }
    ev.pseudo.save(&eval_dir, "pseudo_similarity")?;
    if let Some(s) = &ev.learned {
        s.save(&eval_dir, "similarity")?;
        write_json(&eval_dir.join("knn.json"), &ev.queries)?;
    }
    write_training_curve(&log, &eval_dir.join("training_curve.csv"))?;
    write_json(&dir.join("summary.json"), &ev.summary)?;
    Ok(ev.summary)
}

/// Runs seeds on up to `parallel` threads; results come back in seed order.
fn sweep(
    cfg: &ExperimentConfig,
    raw: &str,
    method: BaselineKind,
    seeds: usize,
    parallel: usize,
    root: &Path,
) -> Result<Vec<SeedSummary>> {
    let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed(i)).collect();
    let workers = parallel.clamp(1, seeds.max(1));
    let mut results: Vec<Option<Result<SeedSummary>>> = (0..seeds).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results
            .chunks_mut(seeds.div_ceil(workers).max(1))
            .zip(seed_list.chunks(seeds.div_ceil(workers).max(1)))
            .map(|(slots, seeds)| {
                scope.spawn(move || {
                    for (slot, &seed) in slots.iter_mut().zip(seeds) {
                        *slot = Some(run_seed(cfg, raw, method, seed, &root.join(seed.to_string())));
                    }
                })
            })
            .collect();
        for handle in chunks {
            handle.join().expect("seed worker panicked");
        }
    });
    results.into_iter().map(|r| r.expect("every seed ran")).collect()
}

/// `run`: trains every seed of the configured method.
pub fn cmd_run(cfg: &ExperimentConfig, raw: &str, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let seeds = opts.seeds.unwrap_or(cfg.dataset.seeds);
    if seeds == 0 {
        return Err(field("seeds", "must be positive"));
    }
    let root = opts.output_root(cfg).join(&cfg.name);
    fs::create_dir_all(&root)?;
    fs::write(root.join("config.json"), raw)?;
    let rows = sweep(cfg, raw, cfg.method, seeds, opts.parallel, &root)?;
    let summary = RunSummary::new(&cfg.name, cfg.method, rows);
    write_json(&root.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Error rates of the three variants over paired seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<RunSummary>,
}

impl AblationTable {
    pub fn row(&self, kind: BaselineKind) -> Option<&RunSummary> {
        self.rows.iter().find(|r| r.method == kind)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(self.seeds.iter().map(|s| format!("seed_{s}")));
        header.extend(["mean".to_string(), "std".to_string()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.method.to_string()];
            rec.extend(r.seeds.iter().map(|s| s.error_rate.to_string()));
            rec.push(r.aggregate.error_rate.mean.to_string());
            rec.push(r.aggregate.error_rate.std.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "test error (%)");
        for s in &self.seeds {
            let _ = write!(out, "{:>9}", format!("seed {s}"));
        }
        let _ = writeln!(out, "{:>18}", "mean ± std");
        for r in &self.rows {
            let _ = write!(out, "{:<16}", r.method.to_string());
            for s in &r.seeds {
                let _ = write!(out, "{:>9.2}", s.error_rate);
            }
            let e = r.aggregate.error_rate;
            let _ = writeln!(out, "{:>18}", format!("{:.2} ± {:.2}", e.mean, e.std));
        }
        out
    }
}

/// `ablate`: supervised-only, Π model and the full method on paired seeds.
pub fn cmd_ablate(cfg: &ExperimentConfig, raw: &str, opts: &RunOptions) -> Result<AblationTable> {
    cfg.validate()?;
    let seeds = opts.seeds.unwrap_or(cfg.dataset.seeds);
    if seeds == 0 {
        return Err(field("seeds", "must be positive"));
    }
    let root = opts.output_root(cfg).join(&cfg.name);
    fs::create_dir_all(&root)?;
    fs::write(root.join("config.json"), raw)?;
    let mut rows = Vec::new();
    for kind in BaselineKind::ALL {
        let dir = root.join(kind.name());
        fs::create_dir_all(&dir)?;
        let seed_rows = sweep(cfg, raw, kind, seeds, opts.parallel, &dir)?;
        let summary = RunSummary::new(&cfg.name, kind, seed_rows);
        write_json(&dir.join("summary.json"), &summary)?;
        rows.push(summary);
    }
    let table = AblationTable {
        experiment: cfg.name.clone(),
        seeds: (0..seeds).map(|i| cfg.seed(i)).collect(),
        rows,
    };
    fs::write(root.join("ablation.csv"), table.to_csv()?)?;
    fs::write(root.join("ablation.txt"), table.render())?;
    write_json(&root.join("ablation.json"), &table)?;
    Ok(table)
}

/// Per-epoch means of the step log.
fn write_training_curve(log: &TrainLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "steps", "sup_f", "sup_w", "unsup_labeled", "unsup_unlabeled", "cons", "total"])?;
    let mut k = 0;
    while k < log.rows.len() {
        let epoch = log.rows[k].epoch;
        let end = log.rows[k..].iter().position(|r| r.epoch != epoch).map_or(log.rows.len(), |p| k + p);
        let rows = &log.rows[k..end];
        let mean = |f: fn(&crate::trainer::TrainLogRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
        w.write_record(&[
            epoch.to_string(),
            rows.len().to_string(),
            mean(|r| r.sup_f).to_string(),
            mean(|r| r.sup_w).to_string(),
            mean(|r| r.unsup_labeled).to_string(),
            mean(|r| r.unsup_unlabeled).to_string(),
            mean(|r| r.cons).to_string(),
            mean(|r| r.total).to_string(),
        ])?;
        k = end;
    }
    w.flush()?;
    Ok(())
}

/// Artifacts a completed seed directory must contain.
pub const RUN_ARTIFACTS: [&str; 4] = ["config.json", "model.bin", "train_log.csv", "summary.json"];

fn is_seed_dir(dir: &Path) -> bool {
    dir.join("model.bin").is_file() || dir.join("train_log.csv").is_file()
}

/// Seed directories under `dir`: itself if it is one, otherwise every
/// child (recursively through method directories) that is one.
fn seed_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if is_seed_dir(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    if dir.is_dir() {
        let mut children: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        for c in children {
            out.extend(seed_dirs(&c)?);
        }
    }
    Ok(out)
}

/// `export-plots`: regenerates plot data (and SVG renderings) from the
/// saved model and log of every seed directory under `run_dir`.
pub fn cmd_export_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let dirs = seed_dirs(run_dir)?;
    if dirs.is_empty() {
        return Err(Error::MissingArtifacts(
            RUN_ARTIFACTS.iter().map(|a| run_dir.join(a)).collect(),
        ));
    }
    let missing: Vec<PathBuf> = dirs
        .iter()
        .flat_map(|d| RUN_ARTIFACTS.iter().map(move |a| d.join(a)))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let mut written = Vec::new();
    for dir in dirs {
        written.extend(export_seed(&dir)?);
    }
    Ok(written)
}

fn export_seed(dir: &Path) -> Result<Vec<PathBuf>> {
    let (cfg, _) = ExperimentConfig::from_file(dir.join("config.json"))?;
    let seed_summary: SeedSummary = read_json(&dir.join("summary.json"))?;
    let state = ModelState::load(dir.join("model.bin"))?;
    let rows = TrainLog::read_csv(dir.join("train_log.csv"))?;
    let log = TrainLog {
        rows,
        epochs: Vec::new(),
    };
    let (train, test) = cfg.dataset.build(seed_summary.seed)?;

    let plots_dir = dir.join("plots");
    fs::create_dir_all(&plots_dir)?;
    let mut written = Vec::new();

    let curve = plots_dir.join("training_curve.csv");
    write_training_curve(&log, &curve)?;
    written.push(curve);

    if state.encoder.spec.input_dim() == 2 {
        let grid = decision_grid(&state, grid_bounds(&cfg, &train), cfg.eval.grid_resolution)?;
        let path = plots_dir.join("decision_grid.csv");
        grid.save_csv(&path)?;
        written.push(path);
        let svg = plots_dir.join("boundary.svg");
        fs::write(&svg, plots::boundary_svg(&grid, &train))?;
        written.push(svg);
    }

    let idx = spread(test.len(), cfg.eval.similarity_size);
    let (stem, matrix) = if seed_summary.method == BaselineKind::FullMethod {
        ("similarity", similarity_matrix(&state, &test, &idx)?)
    } else {
        ("pseudo_similarity", pseudo_label_matrix(&state, &test, &idx)?)
    };
    matrix.save(&plots_dir, stem)?;
    written.push(plots_dir.join(format!("{stem}.csv")));
    written.push(plots_dir.join(format!("{stem}.json")));
    let heat = plots_dir.join(format!("{stem}.svg"));
    fs::write(&heat, plots::heatmap_svg(&matrix))?;
    written.push(heat);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "tiny",
        "dataset": {"name": "two_moons", "n": 200, "sigma": 0.15, "labeled": 12, "test_n": 400, "seeds": 2},
        "train": {"epochs": 0}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.method, BaselineKind::FullMethod);
        assert_eq!(cfg.eval, EvalConfig::default());
        assert_eq!(cfg.seed(1), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("\"seeds\": 2", "\"seeds\": 2, \"colour\": 1");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config { .. })));
    }

    #[test]
    fn field_level_messages() {
        let bad = MINIMAL.replace("\"labeled\": 12", "\"labeled\": 3");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "dataset.labeled"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("\"epochs\": 0", "\"epochs\": 0, \"beta\": -1");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.beta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!((m.mean, m.std, m.n), (2.0, 1.0, 3));
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn spread_indices() {
        assert_eq!(spread(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(spread(7, 7), (0..7).collect::<Vec<_>>());
    }
}
