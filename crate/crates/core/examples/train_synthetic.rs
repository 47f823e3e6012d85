//! Train on a seeded synthetic graph, with early stopping on validation AP,
//! then score the test range. Writes a run directory under a temp dir.
//!
//!     cargo run --release --example train_synthetic

use candle_core::DType;
use patchlink::evaluation::{evaluate, EvalConfig, ModelScorer};
use patchlink::features::FeatureConfig;
use patchlink::graph::chronological_split;
use patchlink::graph::synthetic::{generate, SyntheticSpec};
use patchlink::model::{ModelConfig, ModelSpec, PredictionModel};
use patchlink::training::{fit, RunPaths, TrainConfig, Trainer};

fn main() -> patchlink::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let g = generate(&SyntheticSpec::default());
    let split = chronological_split(&g, (0.8, 0.1, 0.1))?;

    let features = FeatureConfig {
        d_p: 8,
        d_i: 8,
        ..FeatureConfig::default()
    };
    let model_cfg = ModelConfig {
        d_c: 8,
        layers: 1,
        output_dim: 32,
        ..ModelConfig::default()
    };
    let spec = ModelSpec::for_graph(&g, features, vec![2, 4, 8], model_cfg);
    let train = TrainConfig {
        epochs: 8,
        patience: 3,
        learning_rate: 1e-3,
        batch_size: 100,
        ..TrainConfig::default()
    };
    let eval = EvalConfig {
        negatives: 100,
        ..EvalConfig::default()
    };

    let dir = tempfile::tempdir().expect("temp dir");
    let paths = RunPaths::new(dir.path())?;
    let mut trainer = Trainer::new(PredictionModel::new(&spec, 0, DType::F32)?, train)?;
    let outcome = fit(&mut trainer, &g, &split, &eval, Some(&paths))?;
    println!("best epoch {} of {}", outcome.best_epoch, trainer.epochs_run());

    let scorer = ModelScorer {
        model: &trainer.model,
        batch_size: 256,
    };
    let (metrics, _) = evaluate(&scorer, &g, split.test, &eval)?;
    println!(
        "test: mrr {:.4} ± {:.4}, auc {:.4}, ap {:.4} over {} queries",
        metrics.mrr, metrics.mrr_stderr, metrics.auc_roc, metrics.ap, metrics.n_queries
    );
    println!("history:\n{}", std::fs::read_to_string(paths.history()).unwrap());
    Ok(())
}
