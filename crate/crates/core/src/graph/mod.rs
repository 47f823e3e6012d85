//! Snapshot-indexed temporal edge store.
//!
//! Raw edge lists are bucketed into snapshots `1..=T`, node ids are densely
//! re-indexed, and every node gets an interaction-history index sorted by
//! `(snapshot, edge_id)`. Events are undirected for history purposes: an event
//! `(i, j, t)` is indexed under both `i` and `j`.

mod ingest;
mod split;
mod store;
pub mod synthetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest, Bucketing, Column, Delimiter, IngestSchema, IngestedGraph};
pub use split::{chronological_split, SplitSpec, SnapshotRange};
pub use store::{load_graph, save_graph, GraphSidecar};

pub type NodeId = usize;
pub type EdgeId = usize;
/// 1-based snapshot index; `0` is reserved as the empty-history sentinel.
pub type Snapshot = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub source: NodeId,
    pub destination: NodeId,
    pub snapshot: Snapshot,
    pub raw_timestamp: f64,
    pub edge_id: EdgeId,
}

/// One entry of a node's interaction-history index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdjEntry {
    pub neighbor: NodeId,
    pub edge_id: EdgeId,
    pub snapshot: Snapshot,
}

/// Immutable after construction; share freely across readers.
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    num_nodes: usize,
    num_snapshots: usize,
    node_dim: usize,
    edge_dim: usize,
    /// Sorted by `(snapshot, edge_id)`.
    events: Vec<EdgeEvent>,
    /// Row-major `num_nodes x node_dim`.
    node_features: Vec<f32>,
    /// Row-major, indexed by edge id.
    edge_features: Vec<f32>,
    adjacency: Vec<Vec<AdjEntry>>,
    /// Snapshots of every event between an unordered node pair, ascending.
    pair_snapshots: HashMap<(NodeId, NodeId), Vec<Snapshot>>,
}

/// Accumulates events in ingestion order; edge ids are assigned by push order.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    num_nodes: usize,
    num_snapshots: usize,
    node_dim: usize,
    edge_dim: usize,
    node_features: Option<Vec<f32>>,
    events: Vec<EdgeEvent>,
    edge_features: Vec<f32>,
}

impl GraphBuilder {
    pub fn new(num_nodes: usize, num_snapshots: usize, node_dim: usize, edge_dim: usize) -> Self {
        Self {
            num_nodes,
            num_snapshots,
            node_dim,
            edge_dim,
            node_features: None,
            events: Vec::new(),
            edge_features: Vec::new(),
        }
    }

    pub fn node_features(mut self, features: Vec<f32>) -> Result<Self> {
        if features.len() != self.num_nodes * self.node_dim {
            return Err(Error::Shape(format!(
                "node feature bank has {} values, expected {} x {}",
                features.len(),
                self.num_nodes,
                self.node_dim
            )));
        }
        self.node_features = Some(features);
        Ok(self)
    }

    /// `feature` may be empty, in which case the zero vector is stored.
    pub fn push(
        &mut self,
        source: NodeId,
        destination: NodeId,
        snapshot: Snapshot,
        raw_timestamp: f64,
        feature: &[f32],
    ) -> Result<EdgeId> {
        if source >= self.num_nodes || destination >= self.num_nodes {
            return Err(Error::UnknownNode(source.max(destination)));
        }
        if snapshot == 0 || snapshot > self.num_snapshots {
            return Err(Error::Config(format!(
                "snapshot {snapshot} outside [1, {}]",
                self.num_snapshots
            )));
        }
        if feature.is_empty() {
            self.edge_features
                .extend(std::iter::repeat(0.0).take(self.edge_dim));
        } else if feature.len() == self.edge_dim {
            self.edge_features.extend_from_slice(feature);
        } else {
            return Err(Error::Shape(format!(
                "edge feature of length {}, expected {}",
                feature.len(),
                self.edge_dim
            )));
        }
        let edge_id = self.events.len();
        self.events.push(EdgeEvent {
            source,
            destination,
            snapshot,
            raw_timestamp,
            edge_id,
        });
        Ok(edge_id)
    }

    pub fn build(self) -> TemporalGraph {
        let node_features = self
            .node_features
            .unwrap_or_else(|| vec![0.0; self.num_nodes * self.node_dim]);
        TemporalGraph::assemble(
            self.num_nodes,
            self.num_snapshots,
            self.node_dim,
            self.edge_dim,
            self.events,
            node_features,
            self.edge_features,
        )
    }
}

impl TemporalGraph {
    fn assemble(
        num_nodes: usize,
        num_snapshots: usize,
        node_dim: usize,
        edge_dim: usize,
        mut events: Vec<EdgeEvent>,
        node_features: Vec<f32>,
        edge_features: Vec<f32>,
    ) -> Self {
        events.sort_by_key(|e| (e.snapshot, e.edge_id));
        let mut adjacency = vec![Vec::new(); num_nodes];
        let mut pair_snapshots: HashMap<(NodeId, NodeId), Vec<Snapshot>> = HashMap::new();
        for e in &events {
            adjacency[e.source].push(AdjEntry {
                neighbor: e.destination,
                edge_id: e.edge_id,
                snapshot: e.snapshot,
            });
            if e.destination != e.source {
                adjacency[e.destination].push(AdjEntry {
                    neighbor: e.source,
                    edge_id: e.edge_id,
                    snapshot: e.snapshot,
                });
            }
            pair_snapshots
                .entry(pair_key(e.source, e.destination))
                .or_default()
                .push(e.snapshot);
        }
        Self {
            num_nodes,
            num_snapshots,
            node_dim,
            edge_dim,
            events,
            node_features,
            edge_features,
            adjacency,
            pair_snapshots,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_snapshots(&self) -> usize {
        self.num_snapshots
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn events(&self) -> &[EdgeEvent] {
        &self.events
    }

    pub fn node_feature(&self, node: NodeId) -> &[f32] {
        &self.node_features[node * self.node_dim..(node + 1) * self.node_dim]
    }

    pub fn edge_feature(&self, edge_id: EdgeId) -> &[f32] {
        &self.edge_features[edge_id * self.edge_dim..(edge_id + 1) * self.edge_dim]
    }

    pub fn adjacency(&self, node: NodeId) -> Result<&[AdjEntry]> {
        self.adjacency
            .get(node)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode(node))
    }

    /// Events at snapshot `s`, in edge-id order.
    pub fn events_at(&self, snapshot: Snapshot) -> &[EdgeEvent] {
        let lo = self.events.partition_point(|e| e.snapshot < snapshot);
        let hi = self.events.partition_point(|e| e.snapshot <= snapshot);
        &self.events[lo..hi]
    }

    pub fn events_in(&self, range: SnapshotRange) -> &[EdgeEvent] {
        let lo = self.events.partition_point(|e| e.snapshot < range.start);
        let hi = self.events.partition_point(|e| e.snapshot <= range.end);
        &self.events[lo..hi]
    }

    /// Per-snapshot event counts, index `s - 1` for snapshot `s`.
    pub fn snapshot_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_snapshots];
        for e in &self.events {
            counts[e.snapshot - 1] += 1;
        }
        counts
    }

    /// First-hop history of `node` strictly before snapshot `before`
    /// (`1 <= before <= T + 1`). Repeated neighbors are retained.
    pub fn history(&self, node: NodeId, before: Snapshot) -> Result<NeighborSequence<'_>> {
        let index = self.adjacency(node)?;
        if before == 0 || before > self.num_snapshots + 1 {
            return Err(Error::Config(format!(
                "history query at snapshot {before} outside [1, {}]",
                self.num_snapshots + 1
            )));
        }
        let len = index.partition_point(|a| a.snapshot < before);
        Ok(NeighborSequence {
            node,
            before,
            entries: &index[..len],
        })
    }

    /// Count of events between `a` and `b` at each snapshot `s < before`,
    /// written into `out[s - 1]`. `out` must have length `T`; entries at
    /// `s >= before` are left zero.
    pub fn fill_pair_counts(&self, a: NodeId, b: NodeId, before: Snapshot, out: &mut [f32]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Some(snaps) = self.pair_snapshots.get(&pair_key(a, b)) {
            for &s in snaps.iter().take_while(|&&s| s < before) {
                out[s - 1] += 1.0;
            }
        }
    }

    /// A copy of this graph keeping only events for which `keep` returns true.
    /// Node and snapshot counts are preserved; edge ids are re-assigned densely
    /// in the original ingestion order.
    pub fn filter_events(&self, mut keep: impl FnMut(&EdgeEvent) -> bool) -> TemporalGraph {
        let mut by_id: Vec<&EdgeEvent> = self.events.iter().filter(|e| keep(e)).collect();
        by_id.sort_by_key(|e| e.edge_id);
        let mut b = GraphBuilder::new(self.num_nodes, self.num_snapshots, self.node_dim, self.edge_dim)
            .node_features(self.node_features.clone())
            .expect("node bank shape is preserved");
        for e in by_id {
            b.push(
                e.source,
                e.destination,
                e.snapshot,
                e.raw_timestamp,
                self.edge_feature(e.edge_id),
            )
            .expect("event was valid in the source graph");
        }
        b.build()
    }

    /// A copy of this graph with extra events appended after all existing ones
    /// in ingestion order. Each extra event is `(source, destination, snapshot)`.
    pub fn with_extra_events(&self, extra: &[(NodeId, NodeId, Snapshot)]) -> Result<TemporalGraph> {
        let mut by_id: Vec<&EdgeEvent> = self.events.iter().collect();
        by_id.sort_by_key(|e| e.edge_id);
        let mut b = GraphBuilder::new(self.num_nodes, self.num_snapshots, self.node_dim, self.edge_dim)
            .node_features(self.node_features.clone())?;
        for e in by_id {
            b.push(
                e.source,
                e.destination,
                e.snapshot,
                e.raw_timestamp,
                self.edge_feature(e.edge_id),
            )?;
        }
        for &(s, d, t) in extra {
            b.push(s, d, t, t as f64, &[])?;
        }
        Ok(b.build())
    }

    pub(crate) fn raw_parts(&self) -> (&[EdgeEvent], &[f32], &[f32]) {
        (&self.events, &self.node_features, &self.edge_features)
    }
}

fn pair_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// The ordered first-hop history `N_i^t`: a prefix of the node's index.
#[derive(Clone, Copy, Debug)]
pub struct NeighborSequence<'a> {
    pub node: NodeId,
    pub before: Snapshot,
    pub entries: &'a [AdjEntry],
}

impl<'a> NeighborSequence<'a> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The most recent `max_len` entries.
    pub fn most_recent(&self, max_len: usize) -> &'a [AdjEntry] {
        let start = self.entries.len().saturating_sub(max_len);
        &self.entries[start..]
    }
}
