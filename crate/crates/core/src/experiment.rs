//! Experiment orchestration behind the command-line tool.
//!
//! A run is described by one JSON document. Defaults mirror the published
//! hyperparameters for each experiment; presets and user overrides are merged
//! on top. Every CSV written here starts with a `# config_hash=...` line, and
//! [`read_csv`] skips such lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::movielens::{self, Ratings};
use crate::data::sourceloc::{make_sourceloc, SourceLocConfig};
use crate::error::{invalid, Error, Result};
use crate::gnn::{
    build_model, Architecture, GsoNormalization, LayerArch, ModelConfig, Nonlinearity,
    PoolingStrategy, Summarizer,
};
use crate::graphgen::{sample_by_integration, Graph, GraphMeta};
use crate::graphon::{Graphon, GraphonSignal, Partition};
use crate::train::{self, HistoryRow, LossKind, Metric, TrainConfig};
use crate::wsp::{convergence_diagnostic, DiagnosticOptions, DiagnosticTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Sourceloc,
    Movielens,
    Spectra,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Sourceloc => "sourceloc",
            ExperimentKind::Movielens => "movielens",
            ExperimentKind::Spectra => "spectra",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Quick,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureParams {
    /// Output features per layer; its length is the layer count.
    pub features: Vec<usize>,
    /// Filter taps per layer.
    pub taps: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    pub summarizer: Summarizer,
}

impl ArchitectureParams {
    fn build(&self, outputs: usize) -> Result<Architecture> {
        if self.features.is_empty() || self.features.len() != self.taps.len() {
            return Err(invalid(format!(
                "architecture needs matching non-empty feature and tap lists, got {} and {}",
                self.features.len(),
                self.taps.len()
            )));
        }
        Ok(Architecture {
            input_features: 1,
            layers: self
                .features
                .iter()
                .zip(&self.taps)
                .map(|(&features, &taps)| LayerArch {
                    features,
                    taps,
                    nonlinearity: self.nonlinearity,
                    summarizer: self.summarizer,
                })
                .collect(),
            outputs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieLensParams {
    /// Dataset directory (or the ratings file itself).
    pub path: Option<PathBuf>,
    pub target_user: usize,
    pub min_common: usize,
    pub knn: usize,
    pub train_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraParams {
    pub ns: Vec<usize>,
    /// `sqrt3u` (`sqrt(3) u`) or `one`.
    pub signal: String,
    pub retain: usize,
    pub reference_resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Graphon specs (source localization, spectra).
    pub graphons: Vec<String>,
    /// Layer sizes per cell. For MovieLens the input size is the user count
    /// and is left out.
    pub sizes: Vec<Vec<usize>>,
    pub strategies: Vec<PoolingStrategy>,
    /// Dataset realizations (or splits) per cell.
    pub replications: usize,
    pub seed: u64,
    /// Use the same initial weights for every strategy of a replication.
    pub shared_init: bool,
    pub training: TrainingParams,
    pub architecture: ArchitectureParams,
    pub quadrature_points: usize,
    pub normalization: GsoNormalization,
    pub sourceloc: SourceLocConfig,
    pub movielens: MovieLensParams,
    pub spectra: SpectraParams,
    pub out: PathBuf,
    /// Concurrent runs; `None` uses every core.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Published settings for each experiment.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let sourceloc_training = TrainingParams {
            epochs: 300,
            batch_size: 20,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
        };
        let mut cfg = Self {
            experiment: kind,
            graphons: vec!["exp:beta=2.3".into(), "bilinear".into(), "poly".into()],
            sizes: vec![vec![200, 20, 10]],
            strategies: PoolingStrategy::ALL.to_vec(),
            replications: 10,
            seed: 0,
            shared_init: true,
            training: sourceloc_training,
            architecture: ArchitectureParams {
                features: vec![8, 8],
                taps: vec![5, 5],
                nonlinearity: Nonlinearity::Relu,
                summarizer: Summarizer::Mean,
            },
            quadrature_points: 8,
            normalization: GsoNormalization::SpectralRadius,
            sourceloc: SourceLocConfig::default(),
            movielens: MovieLensParams {
                path: None,
                target_user: 1,
                min_common: 2,
                knn: 50,
                train_frac: 0.9,
            },
            spectra: SpectraParams {
                ns: vec![50, 100, 200, 400],
                signal: "sqrt3u".into(),
                retain: 20,
                reference_resolution: None,
            },
            out: PathBuf::from("results"),
            workers: None,
        };
        match kind {
            ExperimentKind::Sourceloc => {}
            ExperimentKind::Movielens => {
                cfg.graphons = Vec::new();
                cfg.sizes = vec![vec![100, 10], vec![50, 10]];
                cfg.training = TrainingParams {
                    epochs: 40,
                    batch_size: 5,
                    learning_rate: 1e-3,
                    beta1: 0.9,
                    beta2: 0.999,
                };
                cfg.architecture.features = vec![32, 8];
            }
            ExperimentKind::Spectra => {
                cfg.graphons = vec!["bilinear".into(), "poly".into(), "exp:beta=2.3".into()];
                cfg.sizes = Vec::new();
                cfg.strategies = Vec::new();
                cfg.replications = 1;
            }
        }
        cfg
    }

    /// Defaults with a preset applied.
    pub fn preset(kind: ExperimentKind, preset: Preset) -> Self {
        let mut cfg = Self::defaults(kind);
        if preset == Preset::Quick {
            match kind {
                ExperimentKind::Sourceloc => {
                    cfg.graphons = vec!["poly".into()];
                    cfg.sizes = vec![vec![60, 20, 10]];
                    cfg.replications = 2;
                    cfg.training.epochs = 40;
                    cfg.sourceloc.n_train = 400;
                    cfg.sourceloc.n_val = 100;
                    cfg.sourceloc.n_test = 100;
                }
                ExperimentKind::Movielens => {
                    cfg.sizes = vec![vec![50, 10]];
                    cfg.replications = 2;
                }
                ExperimentKind::Spectra => {
                    cfg.graphons = vec!["bilinear".into()];
                    cfg.spectra.ns = vec![50, 100, 200];
                }
            }
        }
        cfg
    }

    /// Merges a JSON override document into the defaults of the experiment
    /// it names (or `kind` when it names none).
    pub fn from_json(text: &str, kind: Option<ExperimentKind>, preset: Option<Preset>) -> Result<Self> {
        let overrides: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text)?
        };
        let named = match overrides.get("experiment") {
            Some(v) => Some(serde_json::from_value::<ExperimentKind>(v.clone())?),
            None => None,
        };
        let kind = match (named, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(invalid(format!(
                    "config is for `{}` but `{}` was requested",
                    a.as_str(),
                    b.as_str()
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(invalid("config does not name an experiment")),
        };
        let base = Self::preset(kind, preset.unwrap_or(Preset::Paper));
        let mut merged = serde_json::to_value(base)?;
        merge(&mut merged, overrides);
        let cfg: Self = serde_json::from_value(merged)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, kind: Option<ExperimentKind>, preset: Option<Preset>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?, kind, preset)
    }

    /// SHA-256 of the canonical JSON form, ignoring output location and
    /// worker count (neither affects results).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("out");
            map.remove("workers");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn model_sizes(&self, users: Option<usize>) -> Result<Vec<Vec<usize>>> {
        self.sizes
            .iter()
            .map(|s| {
                let full = match users {
                    Some(u) => std::iter::once(u).chain(s.iter().copied()).collect(),
                    None => s.clone(),
                };
                let layers = self.architecture.features.len();
                if full.len() != 1 && full.len() != layers + 1 {
                    return Err(invalid(format!(
                        "sizes {full:?} do not fit a {layers}-layer architecture"
                    )));
                }
                if full.iter().any(|&n| n == 0) || full.windows(2).any(|w| w[1] > w[0]) {
                    return Err(invalid(format!("sizes {full:?} must be positive and non-increasing")));
                }
                Ok(full)
            })
            .collect()
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.quadrature_points == 0 {
            return Err(invalid("quadrature_points must be positive"));
        }
        if let Some(0) = self.workers {
            return Err(invalid("workers must be positive"));
        }
        for g in &self.graphons {
            Graphon::parse_spec(g)?;
        }
        match self.experiment {
            ExperimentKind::Spectra => {
                signal(&self.spectra.signal)?;
                if let Some(&n) = self.spectra.ns.iter().find(|&&n| n < self.spectra.retain) {
                    return Err(invalid(format!("n = {n} is below retain = {}", self.spectra.retain)));
                }
                return Ok(());
            }
            ExperimentKind::Sourceloc => {
                if self.graphons.is_empty() {
                    return Err(invalid("no graphons configured"));
                }
                self.model_sizes(None)?;
                let s = &self.sourceloc;
                if s.classes == 0 || s.t_max == 0 || s.n_train == 0 || s.n_test == 0 {
                    return Err(invalid("source localization counts must be positive"));
                }
                for sizes in &self.sizes {
                    if s.classes > sizes[0] {
                        return Err(invalid(format!("{} classes on a {}-node graph", s.classes, sizes[0])));
                    }
                }
                if self.training.batch_size > s.n_train {
                    return Err(invalid("batch size exceeds the training set"));
                }
            }
            ExperimentKind::Movielens => {
                if self.movielens.path.is_none() {
                    return Err(invalid("movielens.path is not set"));
                }
                // the user count is only known after loading; any larger input fits
                self.model_sizes(Some(usize::MAX))?;
            }
        }
        if self.strategies.is_empty() || self.replications == 0 || self.sizes.is_empty() {
            return Err(invalid("need at least one strategy, size setting and replication"));
        }
        if self.training.batch_size == 0 || !(self.training.learning_rate > 0.0) {
            return Err(invalid("batch size and learning rate must be positive"));
        }
        self.architecture.build(1)?;
        Ok(())
    }

    fn train_config(&self, seed: u64, loss: LossKind, metric: Metric) -> TrainConfig {
        TrainConfig {
            beta1: self.training.beta1,
            beta2: self.training.beta2,
            ..TrainConfig::new(
                self.training.epochs,
                self.training.batch_size,
                self.training.learning_rate,
                seed,
                loss,
                metric,
            )
        }
    }
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn signal(name: &str) -> Result<GraphonSignal> {
    match name {
        "sqrt3u" => Ok(GraphonSignal::from_fn(|u| 3f64.sqrt() * u)),
        "one" => Ok(GraphonSignal::from_fn(|_| 1.0)),
        other => Err(invalid(format!("unknown signal `{other}` (expected sqrt3u or one)"))),
    }
}

/// Mixes a base seed with run coordinates (splitmix64 steps).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in std::iter::once(&0x5eed).chain(parts) {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Sample mean and (n-1)-normalized standard deviation; std is 0 for a single
/// value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// A CSV table with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric value at `(row, column name)`.
    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        self.rows.get(row)?.get(self.column(name)?)?.parse().ok()
    }

    /// Writes the hash comment line, the header and the rows.
    pub fn write<W: Write>(&self, config_hash: &str, mut out: W) -> Result<()> {
        writeln!(out, "# config_hash={config_hash}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, config_hash: &str, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(config_hash, &mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }
}

/// Reads a CSV written by this module; returns the recorded config hash (if
/// any) and the table.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Option<String>, Table)> {
    let text = fs::read_to_string(path)?;
    let hash = text
        .lines()
        .filter_map(|l| l.strip_prefix("# config_hash="))
        .map(str::to_string)
        .next();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((hash, Table { header, rows }))
}

fn history_table(rows: &[HistoryRow]) -> Table {
    let mut t = Table::new(&train::HISTORY_HEADER);
    for r in rows {
        t.push(vec![
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.metric.to_string(),
        ]);
    }
    t
}

/// Outcome of one experiment run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub config_hash: String,
    pub results: Table,
    /// Per-replication rows.
    pub runs: Table,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    /// `cell: error` for every run that failed.
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    outputs: &'a [String],
    failures: &'a [String],
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn sizes_label(sizes: &[usize]) -> String {
    sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("-")
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

fn finish(config: &ExperimentConfig, mut report: RunReport, histories: Vec<(String, Vec<HistoryRow>)>) -> Result<RunReport> {
    let out = &config.out;
    fs::create_dir_all(out)?;
    let hash = report.config_hash.clone();
    report.results.save(&hash, out.join("results.csv"))?;
    report.outputs.push("results.csv".into());
    if !report.runs.rows.is_empty() {
        report.runs.save(&hash, out.join("runs.csv"))?;
        report.outputs.push("runs.csv".into());
    }
    for (name, rows) in histories {
        history_table(&rows).save(&hash, out.join(&name))?;
        report.outputs.push(name);
    }
    let manifest = Manifest {
        tool: "graphon",
        version: env!("CARGO_PKG_VERSION"),
        experiment: config.experiment.as_str(),
        config_hash: &hash,
        config,
        outputs: &report.outputs,
        failures: &report.failures,
    };
    let mut f = fs::File::create(out.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    writeln!(f)?;
    for failure in &report.failures {
        log::error!("failed: {failure}");
    }
    Ok(report)
}

struct RunResult {
    best_epoch: Option<usize>,
    best: f64,
    last: f64,
    extra: Vec<f64>,
    history: Vec<HistoryRow>,
}

/// Source localization across graphons, size settings and strategies.
/// Every strategy of a replication sees the same dataset realization.
pub fn run_sourceloc(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    if config.experiment != ExperimentKind::Sourceloc {
        return Err(invalid("run_sourceloc needs a sourceloc config"));
    }
    let sizes = config.model_sizes(None)?;
    let classes = config.sourceloc.classes;
    let arch = config.architecture.build(classes)?;

    struct Job {
        g: usize,
        s: usize,
        strategy: PoolingStrategy,
        rep: usize,
    }
    let mut jobs = Vec::new();
    for g in 0..config.graphons.len() {
        for s in 0..sizes.len() {
            for &strategy in &config.strategies {
                for rep in 0..config.replications {
                    jobs.push(Job { g, s, strategy, rep });
                }
            }
        }
    }
    let graphons = config
        .graphons
        .iter()
        .map(|g| Graphon::parse_spec(g))
        .collect::<Result<Vec<_>>>()?;

    let run = |job: &Job| -> Result<RunResult> {
        let w = &graphons[job.g];
        let cell = [job.g as u64, job.s as u64, job.rep as u64];
        let strategy_ix = PoolingStrategy::ALL.iter().position(|&p| p == job.strategy).unwrap() as u64;
        let graph = sample_by_integration(w, &Partition::uniform(sizes[job.s][0])?, config.quadrature_points)?;
        let data_cfg = SourceLocConfig {
            seed: derive_seed(config.seed, &[1, cell[0], cell[1], cell[2]]),
            ..config.sourceloc.clone()
        };
        let data = make_sourceloc(&graph, &data_cfg)?.to_dataset();
        let init = if config.shared_init {
            derive_seed(config.seed, &[2, cell[0], cell[1], cell[2]])
        } else {
            derive_seed(config.seed, &[2, cell[0], cell[1], cell[2], strategy_ix])
        };
        let model_cfg = ModelConfig {
            quadrature_points: config.quadrature_points,
            normalization: config.normalization,
            graphon_spec: config.graphons[job.g].clone(),
            ..ModelConfig::new(sizes[job.s].clone(), arch.clone(), job.strategy, init)
        };
        let model = build_model(w, &model_cfg)?;
        let tc = config.train_config(derive_seed(config.seed, &[3, cell[0], cell[1], cell[2]]), LossKind::CrossEntropy, Metric::Accuracy);
        let outcome = train::train(model, &data, &tc)?;
        Ok(RunResult {
            best_epoch: outcome.best_epoch,
            best: train::evaluate(&outcome.best, &data.test, Metric::Accuracy)?,
            last: train::evaluate(&outcome.model, &data.test, Metric::Accuracy)?,
            extra: Vec::new(),
            history: outcome.history,
        })
    };

    let pool = thread_pool(config.workers)?;
    let results: Vec<Result<RunResult>> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut report = RunReport {
        config_hash: config.hash(),
        results: Table::new(&[
            "graphon", "sizes", "strategy", "replications", "best_val_acc_mean", "best_val_acc_std",
            "final_acc_mean", "final_acc_std",
        ]),
        runs: Table::new(&["graphon", "sizes", "strategy", "replication", "best_epoch", "best_val_acc", "final_acc"]),
        ..Default::default()
    };
    let mut histories = Vec::new();
    let mut cells: BTreeMap<(usize, usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (job, res) in jobs.iter().zip(results) {
        let strategy_ix = config.strategies.iter().position(|&p| p == job.strategy).unwrap();
        let label = format!("{}_{}_{}", slug(&config.graphons[job.g]), sizes_label(&sizes[job.s]), job.strategy);
        match res {
            Ok(r) => {
                report.runs.push(vec![
                    config.graphons[job.g].clone(),
                    sizes_label(&sizes[job.s]),
                    job.strategy.to_string(),
                    job.rep.to_string(),
                    r.best_epoch.map_or(String::new(), |e| e.to_string()),
                    r.best.to_string(),
                    r.last.to_string(),
                ]);
                let entry = cells.entry((job.g, job.s, strategy_ix)).or_default();
                entry.0.push(r.best);
                entry.1.push(r.last);
                histories.push((format!("history_{label}_{}.csv", job.rep), r.history));
            }
            Err(e) => report.failures.push(format!("{label} replication {}: {e}", job.rep)),
        }
    }
    for ((g, s, k), (best, last)) in &cells {
        let (bm, bs) = mean_std(best);
        let (fm, fs) = mean_std(last);
        report.results.push(vec![
            config.graphons[*g].clone(),
            sizes_label(&sizes[*s]),
            config.strategies[*k].to_string(),
            best.len().to_string(),
            bm.to_string(),
            bs.to_string(),
            fm.to_string(),
            fs.to_string(),
        ]);
    }
    finish(config, report, histories)
}

/// Loads (or computes and caches under the output directory) the user
/// similarity graph.
fn similarity_graph(config: &ExperimentConfig, ratings: &Ratings) -> Result<Graph> {
    let p = &config.movielens;
    let key = format!(
        "pearson:min_common={},knn={},users={},movies={},ratings={}",
        p.min_common,
        p.knn,
        ratings.users,
        ratings.movies,
        ratings.len()
    );
    let cache = config.out.join(format!("similarity_m{}_k{}.csv", p.min_common, p.knn));
    if cache.is_file() {
        match Graph::import(&cache) {
            Ok((g, meta)) if meta.kernel.as_deref() == Some(key.as_str()) => return Ok(g),
            Ok(_) => log::info!("similarity cache {} is stale; rebuilding", cache.display()),
            Err(e) => log::warn!("ignoring unreadable similarity cache {}: {e}", cache.display()),
        }
    }
    let g = movielens::user_similarity(ratings, p.min_common, p.knn)?;
    fs::create_dir_all(&config.out)?;
    g.export(&cache, &GraphMeta { kernel: Some(key), seed: None })?;
    Ok(g)
}

/// Rating prediction for one user across strategies and size settings, with
/// one random split per replication.
pub fn run_movielens(config: &ExperimentConfig) -> Result<RunReport> {
    if config.experiment != ExperimentKind::Movielens {
        return Err(invalid("run_movielens needs a movielens config"));
    }
    config.validate()?;
    let path = config.movielens.path.as_ref().expect("validated");
    let ratings = movielens::load_movielens(path)?;
    let users = ratings.users;
    let sizes = config.model_sizes(Some(users))?;
    let sim = similarity_graph(config, &ratings)?;
    let w = movielens::graphon_from_users(&sim)?;
    let arch = config.architecture.build(1)?;
    let p = &config.movielens;

    let tasks = (0..config.replications)
        .map(|rep| {
            movielens::make_rating_task(&ratings, &sim, p.target_user, p.train_frac, derive_seed(config.seed, &[1, rep as u64]))
                .map(|t| t.to_dataset())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for s in 0..sizes.len() {
        for &strategy in &config.strategies {
            for rep in 0..config.replications {
                jobs.push((s, strategy, rep));
            }
        }
    }
    let spec = format!("users:{users}");
    let run = |&(s, strategy, rep): &(usize, PoolingStrategy, usize)| -> Result<RunResult> {
        let strategy_ix = PoolingStrategy::ALL.iter().position(|&p| p == strategy).unwrap() as u64;
        let init = if config.shared_init {
            derive_seed(config.seed, &[2, s as u64, rep as u64])
        } else {
            derive_seed(config.seed, &[2, s as u64, rep as u64, strategy_ix])
        };
        let model_cfg = ModelConfig {
            quadrature_points: config.quadrature_points,
            normalization: config.normalization,
            graphon_spec: spec.clone(),
            ..ModelConfig::new(sizes[s].clone(), arch.clone(), strategy, init)
        };
        let model = build_model(&w, &model_cfg)?;
        let data = &tasks[rep];
        let tc = config.train_config(derive_seed(config.seed, &[3, s as u64, rep as u64]), LossKind::Mse, Metric::Rmse);
        let outcome = train::train(model, data, &tc)?;
        let gap = outcome
            .history
            .last()
            .map_or(f64::NAN, |h| h.val_loss - h.train_loss);
        Ok(RunResult {
            best_epoch: outcome.best_epoch,
            best: train::evaluate(&outcome.best, &data.test, Metric::Rmse)?,
            last: train::evaluate(&outcome.model, &data.test, Metric::Rmse)?,
            extra: vec![train::rmse_clamped(&outcome.model, &data.test, 1.0, 5.0)?, gap],
            history: outcome.history,
        })
    };
    let pool = thread_pool(config.workers)?;
    let results: Vec<Result<RunResult>> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut report = RunReport {
        config_hash: config.hash(),
        results: Table::new(&[
            "sizes", "strategy", "splits", "final_rmse_mean", "final_rmse_std", "best_val_rmse_mean",
            "best_val_rmse_std", "final_rmse_clamped_mean", "final_gap_mean",
        ]),
        runs: Table::new(&[
            "sizes", "strategy", "split", "best_epoch", "best_val_rmse", "final_rmse", "final_rmse_clamped", "final_gap",
        ]),
        ..Default::default()
    };
    let mut histories = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Vec<[f64; 4]>> = BTreeMap::new();
    for (&(s, strategy, rep), res) in jobs.iter().zip(results) {
        let k = config.strategies.iter().position(|&p| p == strategy).unwrap();
        let label = format!("{}_{}", sizes_label(&sizes[s]), strategy);
        match res {
            Ok(r) => {
                report.runs.push(vec![
                    sizes_label(&sizes[s]),
                    strategy.to_string(),
                    rep.to_string(),
                    r.best_epoch.map_or(String::new(), |e| e.to_string()),
                    r.best.to_string(),
                    r.last.to_string(),
                    r.extra[0].to_string(),
                    r.extra[1].to_string(),
                ]);
                cells.entry((s, k)).or_default().push([r.last, r.best, r.extra[0], r.extra[1]]);
                histories.push((format!("history_{label}_{rep}.csv"), r.history));
            }
            Err(e) => report.failures.push(format!("{label} split {rep}: {e}")),
        }
    }
    for ((s, k), v) in &cells {
        let col = |i: usize| v.iter().map(|r| r[i]).collect::<Vec<_>>();
        let (fm, fs) = mean_std(&col(0));
        let (bm, bs) = mean_std(&col(1));
        report.results.push(vec![
            sizes_label(&sizes[*s]),
            config.strategies[*k].to_string(),
            v.len().to_string(),
            fm.to_string(),
            fs.to_string(),
            bm.to_string(),
            bs.to_string(),
            mean_std(&col(2)).0.to_string(),
            mean_std(&col(3)).0.to_string(),
        ]);
    }
    finish(config, report, histories)
}

/// Graph-to-graphon Fourier convergence table for every configured graphon.
pub fn run_spectra(config: &ExperimentConfig) -> Result<RunReport> {
    if config.experiment != ExperimentKind::Spectra {
        return Err(invalid("run_spectra needs a spectra config"));
    }
    config.validate()?;
    let x = signal(&config.spectra.signal)?;
    let options = DiagnosticOptions {
        reference_resolution: config.spectra.reference_resolution,
        quadrature_points: config.quadrature_points,
    };
    let mut header = vec!["graphon"];
    header.extend(DiagnosticTable::HEADER);
    let mut report = RunReport {
        config_hash: config.hash(),
        results: Table::new(&header),
        ..Default::default()
    };
    let pool = thread_pool(config.workers)?;
    for spec in &config.graphons {
        let table = Graphon::parse_spec(spec)
            .and_then(|w| pool.install(|| convergence_diagnostic(&w, &config.spectra.ns, &x, config.spectra.retain, options)));
        match table {
            Ok(t) => {
                for r in t.rows {
                    report.results.push(vec![
                        spec.clone(),
                        r.n.to_string(),
                        r.j.to_string(),
                        r.sigma_graphon.to_string(),
                        r.sigma_graph_scaled.to_string(),
                        r.eig_error.to_string(),
                        r.coeff_error.to_string(),
                    ]);
                }
            }
            Err(e) => report.failures.push(format!("{spec}: {e}")),
        }
    }
    finish(config, report, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_overrides_give_published_settings() {
        let cfg = ExperimentConfig::from_json("{}", Some(ExperimentKind::Sourceloc), None).unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ExperimentKind::Sourceloc));
        assert_eq!(cfg.training.learning_rate, 5e-4);
        assert_eq!((cfg.training.epochs, cfg.training.batch_size), (300, 20));
        let ml = ExperimentConfig::from_json(r#"{"experiment":"movielens"}"#, None, None).unwrap();
        assert_eq!(ml.architecture.features, vec![32, 8]);
        assert_eq!((ml.training.epochs, ml.training.batch_size), (40, 5));
        assert_eq!(ml.training.learning_rate, 1e-3);
    }

    #[test]
    fn overrides_merge_deeply() {
        let cfg = ExperimentConfig::from_json(
            r#"{"training": {"epochs": 3}, "sourceloc": {"t_max": 4}, "sizes": [[30, 10]]}"#,
            Some(ExperimentKind::Sourceloc),
            Some(Preset::Quick),
        )
        .unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.batch_size, 20);
        assert_eq!(cfg.sourceloc.t_max, 4);
        assert_eq!(cfg.sourceloc.n_train, 400);
        assert!(cfg.validate().is_err(), "two sizes for a two-layer architecture");
        assert!(ExperimentConfig::from_json(r#"{"experiment":"spectra"}"#, Some(ExperimentKind::Sourceloc), None).is_err());
        assert!(ExperimentConfig::from_json(r#"{"training": {"epochs": -1}}"#, Some(ExperimentKind::Sourceloc), None).is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = ExperimentConfig::defaults(ExperimentKind::Spectra);
        let mut b = a.clone();
        b.out = "elsewhere".into();
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn seeds_differ_by_coordinate() {
        let a = derive_seed(7, &[1, 0, 0]);
        assert_ne!(a, derive_seed(7, &[1, 0, 1]));
        assert_ne!(a, derive_seed(8, &[1, 0, 0]));
        assert_eq!(a, derive_seed(7, &[1, 0, 0]));
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), (0.1f64 + 0.2).to_string()]);
        let path = dir.path().join("t.csv");
        t.save("abc", &path).unwrap();
        let (hash, back) = read_csv(&path).unwrap();
        assert_eq!(hash.as_deref(), Some("abc"));
        assert_eq!(back, t);
        assert_eq!(back.value(0, "b"), Some(0.1 + 0.2));
    }

    #[test]
    fn spectra_with_empty_n_list() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Spectra, Preset::Quick);
        cfg.spectra.ns.clear();
        cfg.out = dir.path().to_path_buf();
        let report = run_spectra(&cfg).unwrap();
        assert!(report.ok());
        assert!(report.results.rows.is_empty());
        let (_, t) = read_csv(dir.path().join("results.csv")).unwrap();
        assert!(t.rows.is_empty());
        assert!(dir.path().join("manifest.json").is_file());
    }

    #[test]
    fn movielens_without_dataset_names_expected_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Movielens, Preset::Quick);
        cfg.movielens.path = Some(dir.path().join("ml-100k"));
        cfg.out = dir.path().join("out");
        match run_movielens(&cfg) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("ml-100k/u.data")),
            other => panic!("expected missing file error, got {other:?}"),
        }
    }
}
