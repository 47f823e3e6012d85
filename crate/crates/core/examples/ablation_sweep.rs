//! Turn feature families off one at a time through the same config knobs
//! the CLI uses, and compare test metrics.
//!
//!     cargo run --release --example ablation_sweep

use candle_core::DType;
use patchlink::config::RunConfig;
use patchlink::evaluation::{evaluate, ModelScorer};
use patchlink::graph::chronological_split;
use patchlink::graph::synthetic::{generate, SyntheticSpec};
use patchlink::model::PredictionModel;
use patchlink::training::{fit, Trainer};

const BASE: &str = r#"
[dataset]
path = "unused.csv"
bucketing = { kind = "fixed_count", count = 10 }

[features]
d_p = 8
d_i = 8

[model]
d_c = 8
layers = 1
output_dim = 32

[training]
epochs = 4
patience = 4
learning_rate = 1e-3
batch_size = 100

[evaluation]
negatives = 100
"#;

fn main() -> patchlink::Result<()> {
    let g = generate(&SyntheticSpec::default());
    let split = chronological_split(&g, (0.8, 0.1, 0.1))?;
    let variants = [
        ("all features", ""),
        ("no intersect", "intersect=off"),
        ("no occurrence", "occurrence=off"),
        ("node/edge only", "positional=off,occurrence=off,intersect=off"),
    ];
    for (name, ablate) in variants {
        let mut cfg = RunConfig::from_toml(BASE)?;
        cfg.apply_ablation(ablate)?;
        let model = PredictionModel::new(&cfg.model_spec(&g), 0, DType::F32)?;
        let mut trainer = Trainer::new(model, cfg.training.clone())?;
        fit(&mut trainer, &g, &split, &cfg.evaluation, None)?;
        let scorer = ModelScorer {
            model: &trainer.model,
            batch_size: 256,
        };
        let (m, _) = evaluate(&scorer, &g, split.test, &cfg.evaluation)?;
        println!("{name:>15}: mrr {:.4}  auc {:.4}  ap {:.4}", m.mrr, m.auc_roc, m.ap);
    }
    Ok(())
}
