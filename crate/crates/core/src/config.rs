//! Declarative run configuration (TOML) with full defaulting.
//!
//! Only `dataset.path` and `dataset.bucketing` are required; every other
//! value falls back to its default and the resolved configuration is echoed
//! into each run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::features::{FeatureConfig, IntersectMode};
use crate::graph::{Bucketing, IngestSchema, TemporalGraph};
use crate::model::{ModelConfig, ModelSpec};
use crate::patching::PatchPlan;
use crate::training::TrainConfig;

/// Environment variable naming the directory that holds prepared datasets
/// and runs.
pub const ARTIFACT_ROOT_ENV: &str = "PATCHLINK_ARTIFACTS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Artifact directory name; defaults to the file stem of `path`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub schema: IngestSchema,
    pub bucketing: Bucketing,
    /// Target event fractions for train / validation / test.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl DatasetConfig {
    pub fn artifact_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchingConfig {
    pub patch_sizes: Vec<usize>,
}

impl Default for PatchingConfig {
    fn default() -> Self {
        Self {
            patch_sizes: PatchPlan::default().patch_sizes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub patching: PatchingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; a relative `dataset.path` is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.bucketing.validate()?;
        let [a, b, c] = self.dataset.split;
        if [a, b, c].iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config(format!(
                "split fractions must be positive, got {:?}",
                self.dataset.split
            )));
        }
        self.features.validate()?;
        PatchPlan::new(self.patching.patch_sizes.clone(), self.features.max_len)?;
        self.model.validate()?;
        self.training.validate()?;
        self.evaluation.validate()
    }

    pub fn model_spec(&self, g: &TemporalGraph) -> ModelSpec {
        ModelSpec::for_graph(
            g,
            self.features.clone(),
            self.patching.patch_sizes.clone(),
            self.model.clone(),
        )
    }

    /// Turn features off by name: `node_edge`, `positional`, `occurrence`,
    /// `intersect`. Entries look like `intersect=off`.
    pub fn apply_ablation(&mut self, spec: &str) -> Result<()> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("ablation {item:?} is not KEY=off")))?;
            let on = match value.trim() {
                "off" => false,
                "on" => true,
                v => return Err(Error::Config(format!("ablation value {v:?} is not on/off"))),
            };
            let t = &mut self.features.toggles;
            let slot = match key.trim() {
                "node_edge" => &mut t.node_edge,
                "positional" => &mut t.positional,
                "occurrence" => &mut t.occurrence,
                "intersect" => &mut t.intersect,
                k => return Err(Error::Config(format!("unknown feature {k:?}"))),
            };
            *slot = on;
        }
        self.features.validate()
    }

    pub fn set_intersect_mode(&mut self, mode: &str) -> Result<()> {
        self.features.intersect_mode = mode.parse::<IntersectMode>()?;
        Ok(())
    }

    pub fn set_patch_sizes(&mut self, list: &str) -> Result<()> {
        self.patching.patch_sizes = parse_list(list)?;
        PatchPlan::new(self.patching.patch_sizes.clone(), self.features.max_len)?;
        Ok(())
    }
}

/// Comma-separated integers.
pub fn parse_list<T: std::str::FromStr>(list: &str) -> Result<Vec<T>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("{s:?} in {list:?} is not an integer")))
        })
        .collect()
}
