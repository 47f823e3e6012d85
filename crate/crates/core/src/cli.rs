//! The `prepare` / `train` / `eval` commands as library functions; the
//! binary only parses flags and maps errors to exit codes.
//!
//! Layout under the artifact root:
//!
//! ```text
//! <root>/<dataset>/graph.bin, graph.json, id_map.csv, split.json
//! <root>/<dataset>/runs/<tag>/config.json, history.csv, metrics.json,
//!                             queries.csv, checkpoints/{best,last}.safetensors
//! ```
//!
//! With several seeds each seed gets its own `seed-<s>/` run directory and
//! the parent holds the aggregated `metrics.json`.

use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ARTIFACT_ROOT_ENV};
use crate::error::{Error, Result};
use crate::evaluation::{self, write_json, write_query_csv, EvalConfig, Metrics, ModelScorer};
use crate::features::BundleDump;
use crate::graph::{chronological_split, ingest, load_graph, save_graph, IngestedGraph, SplitSpec};
use crate::model::PredictionModel;
use crate::training::{fit, RunPaths, Trainer};

pub const SPLIT_FILE: &str = "split.json";
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
/// Forward passes run on the CPU in a fixed order and are bitwise
/// reproducible for a given build and thread count.
pub const DETERMINISM: &str = "cpu-bitwise";

pub fn artifact_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(ARTIFACT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("artifacts"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub fractions: [f64; 3],
    pub split: SplitSpec,
    pub events: [usize; 3],
}

/// Ingest the dataset, persist the graph, and write the split manifest.
/// Returns the artifact directory.
pub fn cmd_prepare(cfg: &RunConfig, root: &Path) -> Result<PathBuf> {
    let ds = &cfg.dataset;
    if !ds.path.is_file() {
        return Err(Error::Config(format!("dataset file {} not found", ds.path.display())));
    }
    let ingested = ingest(&ds.path, &ds.schema, &ds.bucketing)?;
    let dir = root.join(ds.artifact_name());
    save_graph(&dir, &ingested, &ds.bucketing)?;
    let [a, b, c] = ds.split;
    let split = chronological_split(&ingested.graph, (a, b, c))?;
    let g = &ingested.graph;
    let manifest = SplitManifest {
        fractions: ds.split,
        split,
        events: [
            g.events_in(split.train).len(),
            g.events_in(split.val).len(),
            g.events_in(split.test).len(),
        ],
    };
    write_json(&dir.join(SPLIT_FILE), &manifest)?;
    log::info!(
        "prepared {} nodes, {} events, {} snapshots in {}",
        g.num_nodes(),
        g.num_events(),
        g.num_snapshots(),
        dir.display()
    );
    Ok(dir)
}

pub fn load_prepared(dir: &Path) -> Result<(IngestedGraph, SplitManifest)> {
    if !dir.join(SPLIT_FILE).is_file() {
        return Err(Error::Config(format!(
            "{} is not a prepared dataset (run `prepare` first)",
            dir.display()
        )));
    }
    let (graph, _) = load_graph(dir)?;
    let path = dir.join(SPLIT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((graph, serde_json::from_str(&text)?))
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub seed: u64,
    pub code_version: String,
    pub determinism: String,
    pub fingerprint: String,
    pub artifact_dir: PathBuf,
    pub split: SplitSpec,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub seeds: Option<Vec<u64>>,
    pub ablate: Option<String>,
    pub intersect_mode: Option<String>,
    pub patch_sizes: Option<String>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let mean = evaluation::compensated_mean(values);
        let n = values.len();
        let std = if n < 2 {
            0.0
        } else {
            (evaluation::compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub mrr: MeanStd,
    pub auc_roc: MeanStd,
    pub ap: MeanStd,
    pub per_seed: Vec<Metrics>,
}

impl SeedSummary {
    pub fn new(seeds: Vec<u64>, per_seed: Vec<Metrics>) -> Self {
        let col = |f: fn(&Metrics) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        Self {
            seeds,
            mrr: col(|m| m.mrr),
            auc_roc: col(|m| m.auc_roc),
            ap: col(|m| m.ap),
            per_seed,
        }
    }
}

fn config_tag(cfg: &RunConfig) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut c = cfg.clone();
    c.training.seed = 0;
    let json = serde_json::to_string(&c)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string())
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub summary: SeedSummary,
}

pub fn cmd_train(mut cfg: RunConfig, opts: &TrainOptions, root: &Path) -> Result<TrainOutcome> {
    if let Some(a) = &opts.ablate {
        cfg.apply_ablation(a)?;
    }
    if let Some(m) = &opts.intersect_mode {
        cfg.set_intersect_mode(m)?;
    }
    if let Some(p) = &opts.patch_sizes {
        cfg.set_patch_sizes(p)?;
    }
    cfg.validate()?;
    let artifact_dir = root.join(cfg.dataset.artifact_name());
    let (ingested, manifest) = load_prepared(&artifact_dir)?;
    let seeds = opts.seeds.clone().unwrap_or_else(|| vec![cfg.training.seed]);
    if seeds.is_empty() {
        return Err(Error::Config("--seeds is empty".into()));
    }
    let run_dir = match &opts.run_dir {
        Some(d) => d.clone(),
        None => artifact_dir.join("runs").join(config_tag(&cfg)?),
    };
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let dir = if seeds.len() == 1 {
            run_dir.clone()
        } else {
            run_dir.join(format!("seed-{seed}"))
        };
        let mut c = cfg.clone();
        c.training.seed = seed;
        let metrics = train_one(&c, &ingested, &manifest, &artifact_dir, &dir)?;
        log::info!(
            "seed {seed}: test mrr {:.4} auc {:.4} ap {:.4}",
            metrics.mrr,
            metrics.auc_roc,
            metrics.ap
        );
        per_seed.push(metrics);
    }
    let summary = SeedSummary::new(seeds.clone(), per_seed);
    if seeds.len() > 1 {
        write_json(&run_dir.join("config.json"), &cfg)?;
        write_json(&run_dir.join("metrics.json"), &summary)?;
    }
    Ok(TrainOutcome { run_dir, summary })
}

fn train_one(
    cfg: &RunConfig,
    ingested: &IngestedGraph,
    manifest: &SplitManifest,
    artifact_dir: &Path,
    dir: &Path,
) -> Result<Metrics> {
    let g = &ingested.graph;
    let spec = cfg.model_spec(g);
    let run = RunPaths::new(dir)?;
    let mut record = RunRecord {
        config: cfg.clone(),
        seed: cfg.training.seed,
        code_version: CODE_VERSION.into(),
        determinism: DETERMINISM.into(),
        fingerprint: spec.fingerprint(),
        artifact_dir: std::fs::canonicalize(artifact_dir).unwrap_or_else(|_| artifact_dir.to_path_buf()),
        split: manifest.split,
        best_epoch: None,
        epochs_run: None,
    };
    write_json(&run.config(), &record)?;
    let model = PredictionModel::new(&spec, cfg.training.seed, DType::F32)?;
    let mut trainer = Trainer::new(model, cfg.training.clone())?;
    let outcome = fit(&mut trainer, g, &manifest.split, &cfg.evaluation, Some(&run))?;
    record.best_epoch = Some(outcome.best_epoch);
    record.epochs_run = Some(outcome.history.len());
    write_json(&run.config(), &record)?;

    // score the reloaded best checkpoint so `eval` reproduces these numbers
    let best = PredictionModel::new(&spec, 0, DType::F32)?;
    best.load(&run.best())?;
    let scorer = ModelScorer {
        model: &best,
        batch_size: cfg.evaluation.batch_size,
    };
    let (metrics, queries) = evaluation::evaluate(&scorer, g, manifest.split.test, &cfg.evaluation)?;
    write_json(&run.metrics(), &metrics)?;
    write_query_csv(&run.queries(), &queries)?;
    Ok(metrics)
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Config whose model section must match the checkpoint.
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub negatives: Option<usize>,
    /// `best` (default) or `last`.
    pub checkpoint: Option<String>,
    pub output: Option<PathBuf>,
    /// `(source, destination, t)` in original ids: write both bundles as JSON.
    pub dump_bundle: Option<(String, String, usize)>,
}

pub struct EvalOutcome {
    pub metrics: Metrics,
    pub output: PathBuf,
}

pub fn read_run_record(run_dir: &Path) -> Result<RunRecord> {
    let path = run_dir.join("config.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{}: not a single-seed run record ({e})",
            path.display()
        ))
    })
}

pub fn cmd_eval(run_dir: &Path, opts: &EvalOptions) -> Result<EvalOutcome> {
    let record = read_run_record(run_dir)?;
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => record.config.clone(),
    };
    let (ingested, _) = load_prepared(&record.artifact_dir)?;
    let g = &ingested.graph;
    let spec = cfg.model_spec(g);
    let which = opts.checkpoint.as_deref().unwrap_or("best");
    let run = RunPaths { root: run_dir.to_path_buf() };
    let ckpt = match which {
        "best" => run.best(),
        "last" => run.last(),
        other => return Err(Error::Config(format!("unknown checkpoint {other:?} (best or last)"))),
    };
    if !ckpt.is_file() {
        return Err(Error::Checkpoint(format!("{} does not exist", ckpt.display())));
    }
    let model = PredictionModel::new(&spec, 0, DType::F32)?;
    model.load(&ckpt)?;

    if let Some(seed) = opts.seed {
        cfg.evaluation.seed = seed;
    }
    if let Some(n) = opts.negatives {
        cfg.evaluation.negatives = n;
    }
    let eval: &EvalConfig = &cfg.evaluation;
    let scorer = ModelScorer {
        model: &model,
        batch_size: eval.batch_size,
    };
    let (metrics, queries) = evaluation::evaluate(&scorer, g, record.split.test, eval)?;
    let output = opts
        .output
        .clone()
        .unwrap_or_else(|| run_dir.join("eval").join(format!("metrics-seed{}.json", eval.seed)));
    if let Some(parent) = output.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_json(&output, &metrics)?;
    write_query_csv(&output.with_extension("queries.csv"), &queries)?;

    if let Some((src, dst, t)) = &opts.dump_bundle {
        let dense = |name: &str| -> Result<usize> {
            ingested
                .id_map
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::Config(format!("node {name:?} not in the dataset")))
        };
        let (i, j) = (dense(src)?, dense(dst)?);
        let (a, b) = model.features.gather_pair(g, i, j, *t)?;
        let table = model.features.encode_sides(&[&a, &b])?;
        let dump = serde_json::json!({
            "i": BundleDump::new(&a, &table.bundle(0)?)?,
            "j": BundleDump::new(&b, &table.bundle(1)?)?,
        });
        write_json(&run_dir.join("eval").join(format!("bundle-{src}-{dst}-{t}.json")), &dump)?;
    }
    Ok(EvalOutcome { metrics, output })
}
