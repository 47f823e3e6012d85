//! Supervised training with sampled negatives and early stopping.
//!
//! Each epoch walks the training positives in chronological order. A batch
//! holds `batch_size` positives, each followed by its negatives `(i, j', t)`;
//! one optimizer step is taken per batch. After every epoch the validation
//! range is scored and the parameters with the best selection metric are
//! kept.

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{self, uniform_excluding, EvalConfig, ModelScorer};
use crate::features::RawSide;
use crate::graph::{EdgeEvent, NodeId, Snapshot, SplitSpec, TemporalGraph};
use crate::model::{bce_with_logits, PredictionModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Ap,
    Mrr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Validation metric used to pick the returned checkpoint.
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            patience: 20,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            batch_size: 200,
            negatives_per_positive: 1,
            seed: 0,
            selection: Selection::Ap,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "batch_size and negatives_per_positive must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0)
            || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0)
        {
            return Err(Error::Config(
                "learning_rate and weight_decay must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub i: NodeId,
    pub j: NodeId,
    pub t: Snapshot,
    pub label: bool,
}

impl Sample {
    pub fn positive(e: &EdgeEvent) -> Self {
        Self {
            i: e.source,
            j: e.destination,
            t: e.snapshot,
            label: true,
        }
    }
}

/// `k` negatives sharing the positive's source and snapshot, destinations
/// uniform over all nodes except the positive's.
pub fn sample_negatives(
    g: &TemporalGraph,
    positive: &Sample,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    if k == 0 {
        return Err(Error::Config("need at least one negative".into()));
    }
    Ok(uniform_excluding(g.num_nodes(), positive.j, k, rng)?
        .into_iter()
        .map(|j| Sample {
            j,
            label: false,
            ..*positive
        })
        .collect())
}

/// Positives in order, each followed by its `k` negatives.
pub fn build_batch(
    g: &TemporalGraph,
    positives: &[EdgeEvent],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(positives.len() * (k + 1));
    for e in positives {
        let p = Sample::positive(e);
        out.push(p);
        out.extend(sample_negatives(g, &p, k, rng)?);
    }
    Ok(out)
}

/// Check that nothing gathered for a query at `t` comes from snapshot `t`
/// or later.
pub fn audit_chronology(side: &RawSide, t: Snapshot) -> Result<()> {
    if let Some(e) = side.entries.iter().find(|e| e.snapshot >= t) {
        return Err(Error::Shape(format!(
            "history for a query at {t} holds an event from snapshot {}",
            e.snapshot
        )));
    }
    for k in 0..side.len() {
        if let Some(m) = side.intersect_matrix_of(k) {
            for r in 0..2 {
                if m.row(r).iter().skip(t.saturating_sub(1)).any(|&c| c != 0.0) {
                    return Err(Error::Shape(format!(
                        "intersect counts for a query at {t} reach snapshot {t} or later"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Samples per second.
    pub throughput: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ap: f64,
    pub val_auc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over a maximized validation metric.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, value: f64) -> StopDecision {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

pub struct Trainer {
    pub model: PredictionModel,
    pub config: TrainConfig,
    optimizer: AdamW,
    sample_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: PredictionModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(
            model.params().vars(),
            ParamsAdamW {
                lr: config.learning_rate,
                weight_decay: config.weight_decay,
                ..ParamsAdamW::default()
            },
        )?;
        let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seed);
        sample_rng.set_stream(1);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
        dropout_rng.set_stream(2);
        Ok(Self {
            model,
            config,
            optimizer,
            sample_rng,
            dropout_rng,
            epoch: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// One optimizer step on `samples`; returns the batch loss.
    pub fn step(&mut self, g: &TemporalGraph, samples: &[Sample], batch: usize) -> Result<f64> {
        let sides = gather_samples(&self.model, g, samples)?;
        self.step_sides(&sides, samples, batch)
    }

    fn step_sides(&mut self, sides: &[RawSide], samples: &[Sample], batch: usize) -> Result<f64> {
        let dtype = self.model.dtype();
        let logits = self.model.forward_sides(sides, &mut Some(&mut self.dropout_rng))?;
        let labels: Vec<f64> = samples.iter().map(|s| s.label as u8 as f64).collect();
        let labels = Tensor::from_vec(labels, samples.len(), logits.device())?.to_dtype(dtype)?;
        let loss = bce_with_logits(&logits, &labels)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: value,
                epoch: self.epoch + 1,
                batch,
                param_norm: self.model.params().norm()?,
            });
        }
        self.optimizer.backward_step(&loss)?;
        Ok(value)
    }

    pub fn train_epoch(&mut self, g: &TemporalGraph, split: &SplitSpec) -> Result<EpochStats> {
        let positives = g.events_in(split.train);
        if positives.is_empty() {
            return Err(Error::Empty(format!(
                "training range {}..={} holds no events",
                split.train.start, split.train.end
            )));
        }
        let start = Instant::now();
        let mut losses = Vec::new();
        let mut seen = 0usize;
        for (b, chunk) in positives.chunks(self.config.batch_size).enumerate() {
            let samples = build_batch(
                g,
                chunk,
                self.config.negatives_per_positive,
                &mut self.sample_rng,
            )?;
            let sides = gather_samples(&self.model, g, &samples)?;
            if b == 0 {
                for (s, pair) in samples.iter().zip(sides.chunks(2)) {
                    audit_chronology(&pair[0], s.t)?;
                    audit_chronology(&pair[1], s.t)?;
                }
            }
            losses.push(self.step_sides(&sides, &samples, b)?);
            seen += samples.len();
        }
        self.epoch += 1;
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        Ok(EpochStats {
            mean_loss: evaluation::compensated_mean(&losses),
            throughput: seen as f64 / secs,
            steps: losses.len(),
        })
    }

    /// Validation metrics `(selection value, ap, auc)`.
    pub fn validate(
        &self,
        g: &TemporalGraph,
        split: &SplitSpec,
        eval: &EvalConfig,
    ) -> Result<(f64, f64, f64)> {
        let scorer = ModelScorer {
            model: &self.model,
            batch_size: eval.batch_size,
        };
        let (auc, ap) = evaluation::auc_ap(&scorer, g, split.val, eval)?;
        let selected = match self.config.selection {
            Selection::Ap => ap,
            Selection::Mrr => evaluation::mrr(&scorer, g, split.val, eval)?.mrr,
        };
        Ok((selected, ap, auc))
    }
}

/// Sides `[i_0, j_0, i_1, j_1, ...]` for a sample list.
pub fn gather_samples(
    model: &PredictionModel,
    g: &TemporalGraph,
    samples: &[Sample],
) -> Result<Vec<RawSide>> {
    let mut sides = Vec::with_capacity(2 * samples.len());
    for s in samples {
        let (a, b) = model.features.gather_pair(g, s.i, s.j, s.t)?;
        sides.push(a);
        sides.push(b);
    }
    Ok(sides)
}

/// Where `fit` writes history and checkpoints.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let ckpt = root.join("checkpoints");
        std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        Ok(Self { root })
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("history.csv")
    }

    pub fn best(&self) -> PathBuf {
        self.root.join("checkpoints").join("best.safetensors")
    }

    pub fn last(&self) -> PathBuf {
        self.root.join("checkpoints").join("last.safetensors")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn queries(&self) -> PathBuf {
        self.root.join("queries.csv")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_value: f64,
    pub stopped_early: bool,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train until `epochs` or early stop, then load the best parameters back
/// into the model.
pub fn fit(
    trainer: &mut Trainer,
    g: &TemporalGraph,
    split: &SplitSpec,
    eval: &EvalConfig,
    run: Option<&RunPaths>,
) -> Result<FitOutcome> {
    let mut stopper = EarlyStopping::new(trainer.config.patience);
    let mut best = trainer.model.params().snapshot()?;
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=trainer.config.epochs {
        let stats = trainer.train_epoch(g, split)?;
        let (value, ap, auc) = trainer.validate(g, split, eval)?;
        history.push(EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            val_ap: ap,
            val_auc: auc,
        });
        log::info!(
            "epoch {epoch}: loss {:.5} val_ap {ap:.4} val_auc {auc:.4} ({:.0} samples/s)",
            stats.mean_loss,
            stats.throughput
        );
        let decision = stopper.update(epoch, value);
        if decision == StopDecision::Improved {
            best = trainer.model.params().snapshot()?;
        }
        if let Some(run) = run {
            write_history(&run.history(), &history)?;
            let meta = [("epoch".to_string(), epoch.to_string())].into();
            trainer.model.save(&run.last(), meta)?;
            if decision == StopDecision::Improved {
                let meta = [
                    ("epoch".to_string(), epoch.to_string()),
                    ("val_selection".to_string(), value.to_string()),
                ]
                .into();
                trainer.model.save(&run.best(), meta)?;
            }
        }
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    trainer.model.params().restore(&best)?;
    Ok(FitOutcome {
        history,
        best_epoch: stopper.best_epoch(),
        best_value: stopper.best().unwrap_or(f64::NAN),
        stopped_early,
    })
}
