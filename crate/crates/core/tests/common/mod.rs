//! Shared fixtures: random small graphs and brute-force recounts that only
//! look at the raw event list.
#![allow(dead_code)]

use candle_core::{DType, Tensor};
use patchlink::features::FeatureConfig;
use patchlink::graph::{GraphBuilder, TemporalGraph};
use patchlink::model::{ModelConfig, ModelSpec, PredictionModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw description of a random graph: `(nodes, snapshots, events)`.
#[derive(Clone, Debug)]
pub struct RawGraph {
    pub nodes: usize,
    pub snapshots: usize,
    pub events: Vec<(usize, usize, usize)>,
}

impl RawGraph {
    /// Events are pushed in the given (not necessarily chronological) order;
    /// edge features are a function of the event itself, so they survive
    /// deletions of other events.
    pub fn build(&self) -> TemporalGraph {
        let feats = (0..self.nodes * 2).map(|v| v as f32 * 0.5).collect();
        let mut b = GraphBuilder::new(self.nodes, self.snapshots, 2, 2)
            .node_features(feats)
            .unwrap();
        for &(s, d, t) in &self.events {
            b.push(s, d, t, t as f64, &[t as f32, (s * 10 + d) as f32])
                .unwrap();
        }
        b.build()
    }

    pub fn random(rng: &mut ChaCha8Rng, max_events: usize) -> Self {
        let nodes = rng.gen_range(2..=8);
        let snapshots = rng.gen_range(1..=6);
        let n_events = rng.gen_range(0..=max_events);
        let events = (0..n_events)
            .map(|_| {
                (
                    rng.gen_range(0..nodes),
                    rng.gen_range(0..nodes),
                    rng.gen_range(1..=snapshots),
                )
            })
            .collect();
        Self {
            nodes,
            snapshots,
            events,
        }
    }
}

pub fn raw_graph(max_events: usize) -> impl Strategy<Value = RawGraph> {
    any::<u64>().prop_map(move |seed| RawGraph::random(&mut ChaCha8Rng::seed_from_u64(seed), max_events))
}

/// Per-snapshot count of events joining `{i, n}` strictly before `t`.
pub fn brute_occurrence(raw: &RawGraph, i: usize, n: usize, t: usize) -> Vec<f32> {
    let mut out = vec![0.0; raw.snapshots];
    for &(s, d, snap) in &raw.events {
        let joins = (s == i && d == n) || (s == n && d == i);
        if joins && snap < t {
            out[snap - 1] += 1.0;
        }
    }
    out
}

/// Neighbors of `i` before `t` as `(neighbor, snapshot, event index)`,
/// sorted chronologically with ingestion order breaking ties.
pub fn brute_history(raw: &RawGraph, i: usize, t: usize) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = raw
        .events
        .iter()
        .enumerate()
        .filter(|(_, &(s, d, snap))| (s == i || d == i) && snap < t)
        .map(|(k, &(s, d, snap))| (if s == i { d } else { s }, snap, k))
        .collect();
    out.sort_by_key(|&(_, snap, k)| (snap, k));
    out
}

pub fn small_spec(g: &TemporalGraph, plan: Vec<usize>) -> ModelSpec {
    ModelSpec::for_graph(
        g,
        FeatureConfig {
            d_p: 3,
            d_i: 4,
            max_len: 8,
            ..FeatureConfig::default()
        },
        plan,
        ModelConfig {
            d_c: 4,
            layers: 1,
            heads: 2,
            dropout: 0.0,
            output_dim: 6,
            ..ModelConfig::default()
        },
    )
}

pub fn small_model(g: &TemporalGraph, seed: u64) -> PredictionModel {
    PredictionModel::new(&small_spec(g, vec![1, 2, 4]), seed, DType::F32).unwrap()
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.to_dtype(DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap()
        .into_iter()
        .map(f64::to_bits)
        .collect()
}
