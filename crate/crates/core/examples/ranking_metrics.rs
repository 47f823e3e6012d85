//! Ranking and classification metrics, and the protocol with any scorer.
//!
//!     cargo run --example ranking_metrics

use patchlink::evaluation::{auc_roc, average_precision, evaluate, rank, EvalConfig};
use patchlink::graph::synthetic::{generate, SyntheticSpec};
use patchlink::graph::SnapshotRange;
use patchlink::model::PairQuery;

fn main() -> patchlink::Result<()> {
    // ties count half
    println!("rank of 0.5 among [0.9, 0.5, 0.1]: {}", rank(0.5, &[0.9, 0.5, 0.1]));
    let scores = [0.9, 0.8, 0.7, 0.1];
    let labels = [true, false, true, false];
    println!("auc {:.3}, ap {:.3}", auc_roc(&scores, &labels)?, average_precision(&scores, &labels)?);

    // a heuristic scorer: recent common activity between the two endpoints
    let g = generate(&SyntheticSpec::default());
    let common = |q: &PairQuery| -> f64 {
        let mut counts = vec![0f32; g.num_snapshots()];
        g.fill_pair_counts(q.i, q.j, q.t, &mut counts);
        counts.iter().map(|&c| c as f64).sum()
    };
    let t = g.num_snapshots();
    let cfg = EvalConfig {
        negatives: 100,
        ..EvalConfig::default()
    };
    let (m, ranks) = evaluate(&common, &g, SnapshotRange::new(t, t), &cfg)?;
    println!("repeat-pair heuristic: mrr {:.4}, auc {:.4}, ap {:.4}", m.mrr, m.auc_roc, m.ap);
    println!("first query ranked {}", ranks[0].rank);
    Ok(())
}
