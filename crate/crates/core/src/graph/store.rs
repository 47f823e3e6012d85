use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bucketing, EdgeEvent, IngestedGraph, TemporalGraph};
use crate::error::{Error, Result};

pub const GRAPH_FILE: &str = "graph.bin";
pub const SIDECAR_FILE: &str = "graph.json";
pub const ID_MAP_FILE: &str = "id_map.csv";

/// JSON description written next to the binary graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSidecar {
    pub num_nodes: usize,
    pub num_snapshots: usize,
    pub num_events: usize,
    pub d_n: usize,
    pub d_e: usize,
    pub bucketing: Bucketing,
    pub id_map_path: String,
}

#[derive(Serialize, Deserialize)]
struct StoredGraph {
    num_nodes: usize,
    num_snapshots: usize,
    node_dim: usize,
    edge_dim: usize,
    events: Vec<EdgeEvent>,
    node_features: Vec<f32>,
    edge_features: Vec<f32>,
}

pub fn save_graph(dir: &Path, ingested: &IngestedGraph, bucketing: &Bucketing) -> Result<GraphSidecar> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &ingested.graph;
    let (events, node_features, edge_features) = g.raw_parts();
    let stored = StoredGraph {
        num_nodes: g.num_nodes(),
        num_snapshots: g.num_snapshots(),
        node_dim: g.node_dim(),
        edge_dim: g.edge_dim(),
        events: events.to_vec(),
        node_features: node_features.to_vec(),
        edge_features: edge_features.to_vec(),
    };
    let path = dir.join(GRAPH_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    bincode::serialize_into(BufWriter::new(file), &stored)?;

    let path = dir.join(ID_MAP_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "dense_id,original_id").map_err(|e| Error::io(&path, e))?;
    for (i, raw) in ingested.id_map.iter().enumerate() {
        writeln!(w, "{i},{raw}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let sidecar = GraphSidecar {
        num_nodes: g.num_nodes(),
        num_snapshots: g.num_snapshots(),
        num_events: g.num_events(),
        d_n: g.node_dim(),
        d_e: g.edge_dim(),
        bucketing: bucketing.clone(),
        id_map_path: ID_MAP_FILE.to_string(),
    };
    let path = dir.join(SIDECAR_FILE);
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}

pub fn load_graph(dir: &Path) -> Result<(IngestedGraph, GraphSidecar)> {
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: GraphSidecar = serde_json::from_str(&text)?;

    let path = dir.join(GRAPH_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let stored: StoredGraph = bincode::deserialize_from(BufReader::new(file))?;

    let path = dir.join(&sidecar.id_map_path);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut id_map = Vec::with_capacity(stored.num_nodes);
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Serde(e.to_string()))?;
        id_map.push(rec.get(1).unwrap_or_default().to_string());
    }
    let graph = TemporalGraph::assemble(
        stored.num_nodes,
        stored.num_snapshots,
        stored.node_dim,
        stored.edge_dim,
        stored.events,
        stored.node_features,
        stored.edge_features,
    );
    Ok((IngestedGraph { graph, id_map }, sidecar))
}
