//! Build the five feature sequences for one node pair and show that they
//! only look at history strictly before the query snapshot.
//!
//!     cargo run --example feature_bundle

use candle_core::DType;
use patchlink::features::{intersect_matrix, occurrence_vector, BundleDump, FeatureConfig};
use patchlink::graph::GraphBuilder;
use patchlink::model::{ModelConfig, ModelSpec, PredictionModel};

fn main() -> patchlink::Result<()> {
    // 0 talks to 1 and 2, 1 talks to 2; the (0, 1) event at snapshot 4 is the future.
    let mut b = GraphBuilder::new(4, 4, 1, 1);
    for (s, d, t) in [(0, 1, 1), (0, 2, 1), (1, 2, 2), (0, 1, 3), (2, 3, 3), (0, 1, 4)] {
        b.push(s, d, t, t as f64, &[0.0])?;
    }
    let g = b.build();

    println!("occurrence of 1 in 0's history before t=4: {:?}", occurrence_vector(&g, 0, 1, 4));
    let m = intersect_matrix(&g, 0, 1, 2, 4);
    println!("node 2 as seen by (0, 1): {:?} / {:?}", m.row(0), m.row(1));

    let features = FeatureConfig {
        d_p: 2,
        d_i: 3,
        max_len: 8,
        ..FeatureConfig::default()
    };
    let spec = ModelSpec::for_graph(&g, features, vec![1, 2], ModelConfig { d_c: 4, ..ModelConfig::default() });
    let model = PredictionModel::new(&spec, 0, DType::F32)?;
    let (raw_i, raw_j) = model.features.gather_pair(&g, 0, 1, 4)?;
    let (bi, _) = model.features.build_bundle(&g, 0, 1, 4)?;
    println!("node 0 history length {}, node 1 history length {}", raw_i.len(), raw_j.len());
    let dump = BundleDump::new(&raw_i, &bi)?;
    println!("{}", serde_json::to_string(&dump).expect("json"));
    Ok(())
}
