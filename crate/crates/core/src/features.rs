//! Per-neighbor feature sequences for a node pair at a prediction snapshot.
//!
//! For node `i` with history `N_i^t`, every history element `n` contributes
//! one row to each of five aligned sequences:
//!
//! * node features of `n` and the feature of the connecting edge,
//! * the trainable sinusoidal encoding of the element's snapshot index,
//! * the occurrence vector: per-snapshot counts of `(i, n)` events,
//! * the intersect feature: an encoder applied to the `2 x T` matrix of
//!   per-snapshot counts of `n` as a neighbor of `i` (row 1) and of the
//!   partner node `j` (row 2).
//!
//! Every count is masked to snapshots strictly before the prediction
//! snapshot, so nothing at or after `t` can reach a bundle.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AdjEntry, NodeId, Snapshot, TemporalGraph};
use crate::nn::{Dense, Gru, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureToggles {
    pub node_edge: bool,
    pub positional: bool,
    pub occurrence: bool,
    pub intersect: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        Self {
            node_edge: true,
            positional: true,
            occurrence: true,
            intersect: true,
        }
    }
}

impl FeatureToggles {
    pub fn any(&self) -> bool {
        self.node_edge || self.positional || self.occurrence || self.intersect
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectMode {
    Gru,
    Mlp,
    #[default]
    Sum,
}

impl std::str::FromStr for IntersectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(IntersectMode::Gru),
            "mlp" => Ok(IntersectMode::Mlp),
            "sum" => Ok(IntersectMode::Sum),
            other => Err(Error::Config(format!(
                "unknown intersect mode {other:?} (expected gru, mlp or sum)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Number of frequencies; the positional feature has width `2 * d_p`.
    pub d_p: usize,
    pub d_i: usize,
    pub max_len: usize,
    pub intersect_mode: IntersectMode,
    pub toggles: FeatureToggles,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            d_p: 50,
            d_i: 50,
            max_len: 32,
            intersect_mode: IntersectMode::Sum,
            toggles: FeatureToggles::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_p == 0 || self.d_i == 0 {
            return Err(Error::Config("d_p and d_i must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if !self.toggles.any() {
            return Err(Error::Config("at least one feature must be enabled".into()));
        }
        Ok(())
    }
}

/// Trainable snapshot-index encoding
/// `sqrt(1 / (2 d_p)) [cos(w_1 p), sin(w_1 p), ..., cos(w_dp p), sin(w_dp p)]`.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    freqs: Tensor,
    d_p: usize,
}

impl TimeEncoder {
    /// Frequencies start on the geometric spectrum `w_k = 10^(-(k-1) * 9 / d_p)`.
    pub fn new(store: &mut ParamStore, name: &str, d_p: usize) -> Result<Self> {
        let init = (0..d_p)
            .map(|k| 10f64.powf(-(k as f64) * 9.0 / d_p as f64))
            .collect();
        Ok(Self {
            freqs: store.with_values(&format!("{name}.freqs"), &[d_p], init)?,
            d_p,
        })
    }

    pub fn from_frequencies(freqs: Tensor) -> Result<Self> {
        let d_p = freqs.dims1()?;
        Ok(Self { freqs, d_p })
    }

    pub fn d_p(&self) -> usize {
        self.d_p
    }

    pub fn out_dim(&self) -> usize {
        2 * self.d_p
    }

    pub fn frequencies(&self) -> &Tensor {
        &self.freqs
    }

    /// `positions: [n]` to `[n, 2 d_p]`.
    pub fn encode(&self, positions: &Tensor) -> Result<Tensor> {
        let n = positions.dims1()?;
        let angles = positions
            .to_dtype(self.freqs.dtype())?
            .unsqueeze(1)?
            .broadcast_mul(&self.freqs.unsqueeze(0)?)?;
        let pairs = Tensor::stack(&[angles.cos()?, angles.sin()?], 2)?;
        let scale = (1.0 / (2.0 * self.d_p as f64)).sqrt();
        Ok((pairs.reshape((n, 2 * self.d_p))? * scale)?)
    }

    pub fn encode_position(&self, p: f64) -> Result<Tensor> {
        let pos = Tensor::new(&[p], self.freqs.device())?;
        Ok(self.encode(&pos)?.squeeze(0)?)
    }
}

/// Per-snapshot counts of `(i, n)` events before `t`. Entry `s - 1` holds
/// snapshot `s`; entries for `s >= t` are zero.
pub fn occurrence_vector(g: &TemporalGraph, i: NodeId, n: NodeId, t: Snapshot) -> Vec<f32> {
    let mut out = vec![0.0; g.num_snapshots()];
    g.fill_pair_counts(i, n, t, &mut out);
    out
}

/// `2 x T` count matrix for neighbor `n` against the pair `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntersectMatrix {
    num_snapshots: usize,
    /// Row-major: row 0 for `i`, row 1 for `j`.
    counts: Vec<f32>,
}

impl IntersectMatrix {
    pub fn from_rows(first: Vec<f32>, second: Vec<f32>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::Shape(format!(
                "intersect rows of length {} and {}",
                first.len(),
                second.len()
            )));
        }
        let num_snapshots = first.len();
        let mut counts = first;
        counts.extend(second);
        Ok(Self {
            num_snapshots,
            counts,
        })
    }

    pub fn num_snapshots(&self) -> usize {
        self.num_snapshots
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.counts[r * self.num_snapshots..(r + 1) * self.num_snapshots]
    }

    pub fn swapped(&self) -> Self {
        Self::from_rows(self.row(1).to_vec(), self.row(0).to_vec()).expect("rows share a length")
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.counts
    }
}

pub fn intersect_matrix(
    g: &TemporalGraph,
    i: NodeId,
    j: NodeId,
    n: NodeId,
    t: Snapshot,
) -> IntersectMatrix {
    IntersectMatrix::from_rows(occurrence_vector(g, i, n, t), occurrence_vector(g, j, n, t))
        .expect("both rows have length T")
}

/// `f(A)`: maps a `2 x T` intersect matrix to `d_i` values.
#[derive(Clone, Debug)]
pub struct IntersectEncoder {
    mode: IntersectMode,
    num_snapshots: usize,
    d_i: usize,
    gru: Option<Gru>,
    first: Dense,
    second: Dense,
}

impl IntersectEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        mode: IntersectMode,
        num_snapshots: usize,
        d_i: usize,
    ) -> Result<Self> {
        let (gru, first) = match mode {
            IntersectMode::Gru => (
                Some(Gru::new(store, &format!("{name}.gru"), 2, d_i)?),
                Dense::new(store, &format!("{name}.proj"), d_i, d_i)?,
            ),
            IntersectMode::Mlp => (None, Dense::new(store, &format!("{name}.ff1"), 2 * num_snapshots, d_i)?),
            IntersectMode::Sum => (None, Dense::new(store, &format!("{name}.ff1"), 2, d_i)?),
        };
        let second = Dense::new(store, &format!("{name}.ff2"), d_i, d_i)?;
        Ok(Self {
            mode,
            num_snapshots,
            d_i,
            gru,
            first,
            second,
        })
    }

    pub fn mode(&self) -> IntersectMode {
        self.mode
    }

    pub fn out_dim(&self) -> usize {
        self.d_i
    }

    /// `mats: [u, 2, T]` to `[u, d_i]`.
    pub fn encode_batch(&self, mats: &Tensor) -> Result<Tensor> {
        let (u, rows, t) = mats.dims3()?;
        if rows != 2 || t != self.num_snapshots {
            return Err(Error::Shape(format!(
                "intersect encoder configured for 2 x {}, got {rows} x {t}",
                self.num_snapshots
            )));
        }
        match self.mode {
            IntersectMode::Gru => {
                let seq = mats.transpose(1, 2)?.contiguous()?;
                let h = self.gru.as_ref().expect("gru mode").forward(&seq)?;
                self.second.forward(&self.first.forward(&h)?.relu()?)
            }
            IntersectMode::Mlp => {
                let flat = mats.reshape((u, 2 * t))?;
                self.second.forward(&self.first.forward(&flat)?.relu()?)
            }
            IntersectMode::Sum => {
                let sums = mats.sum(2)?;
                self.second.forward(&self.first.forward(&sums)?.relu()?)
            }
        }
    }

    pub fn encode(&self, m: &IntersectMatrix, dtype: DType) -> Result<Tensor> {
        let mats = Tensor::from_slice(m.as_slice(), (1, 2, m.num_snapshots()), &Device::Cpu)?
            .to_dtype(dtype)?;
        Ok(self.encode_batch(&mats)?.squeeze(0)?)
    }
}

/// Width used for a node or edge feature bank of dimension `d`.
pub fn effective_dim(d: usize) -> usize {
    d.max(1)
}

fn push_padded(out: &mut Vec<f32>, values: &[f32], width: usize) {
    out.extend_from_slice(values);
    out.extend(std::iter::repeat(0.0).take(width - values.len()));
}

/// Raw (untrained) inputs for one side of a pair: the truncated history and
/// every count it needs. Empty histories become a single placeholder element.
#[derive(Clone, Debug)]
pub struct RawSide {
    pub entries: Vec<AdjEntry>,
    pub placeholder: bool,
    /// Untruncated history length `|N^t|`.
    pub full_len: usize,
    node_dim: usize,
    edge_dim: usize,
    num_snapshots: usize,
    node: Vec<f32>,
    edge: Vec<f32>,
    positions: Vec<f64>,
    occ: Vec<f32>,
    /// One `2 x T` matrix per distinct neighbor among `entries`.
    intersect: Vec<f32>,
    /// Element index into `intersect` matrices; `None` for the placeholder.
    intersect_index: Vec<Option<usize>>,
}

impl RawSide {
    /// History of `center` before `t`, annotated against `partner`.
    pub fn gather(
        g: &TemporalGraph,
        center: NodeId,
        partner: NodeId,
        t: Snapshot,
        max_len: usize,
    ) -> Result<Self> {
        g.adjacency(partner)?;
        let history = g.history(center, t)?;
        let entries = history.most_recent(max_len).to_vec();
        // Zero-width feature banks are widened to a single zero column.
        let (node_dim, edge_dim, num_snapshots) = (
            effective_dim(g.node_dim()),
            effective_dim(g.edge_dim()),
            g.num_snapshots(),
        );
        let mut side = Self {
            placeholder: entries.is_empty(),
            full_len: history.len(),
            node_dim,
            edge_dim,
            num_snapshots,
            node: Vec::new(),
            edge: Vec::new(),
            positions: Vec::new(),
            occ: Vec::new(),
            intersect: Vec::new(),
            intersect_index: Vec::new(),
            entries,
        };
        if side.placeholder {
            side.node = vec![0.0; node_dim];
            side.edge = vec![0.0; edge_dim];
            side.positions = vec![0.0];
            side.occ = vec![0.0; num_snapshots];
            side.intersect_index = vec![None];
            return Ok(side);
        }
        let mut distinct: Vec<NodeId> = Vec::new();
        for e in &side.entries {
            push_padded(&mut side.node, g.node_feature(e.neighbor), node_dim);
            push_padded(&mut side.edge, g.edge_feature(e.edge_id), edge_dim);
            side.positions.push(e.snapshot as f64);
            let slot = match distinct.iter().position(|&d| d == e.neighbor) {
                Some(k) => k,
                None => {
                    distinct.push(e.neighbor);
                    distinct.len() - 1
                }
            };
            side.intersect_index.push(Some(slot));
        }
        let mut row = vec![0.0; num_snapshots];
        for &n in &distinct {
            g.fill_pair_counts(center, n, t, &mut row);
            side.intersect.extend_from_slice(&row);
            g.fill_pair_counts(partner, n, t, &mut row);
            side.intersect.extend_from_slice(&row);
        }
        for slot in &side.intersect_index {
            let k = slot.expect("real element");
            let start = k * 2 * num_snapshots;
            side.occ
                .extend_from_slice(&side.intersect[start..start + num_snapshots]);
        }
        Ok(side)
    }

    /// Number of sequence elements (at least 1).
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn num_snapshots(&self) -> usize {
        self.num_snapshots
    }

    pub fn occurrence_rows(&self) -> &[f32] {
        &self.occ
    }

    pub fn intersect_matrix_of(&self, element: usize) -> Option<IntersectMatrix> {
        let k = self.intersect_index.get(element).copied().flatten()?;
        let t = self.num_snapshots;
        let start = k * 2 * t;
        Some(
            IntersectMatrix::from_rows(
                self.intersect[start..start + t].to_vec(),
                self.intersect[start + t..start + 2 * t].to_vec(),
            )
            .expect("rows share a length"),
        )
    }
}

/// The five aligned sequences for one node, each `[length, d]`.
#[derive(Clone, Debug)]
pub struct FeatureBundle {
    pub node: Tensor,
    pub edge: Tensor,
    pub pos: Tensor,
    pub occ: Tensor,
    pub int: Tensor,
    pub length: usize,
}

impl FeatureBundle {
    pub fn sequences(&self) -> [&Tensor; 5] {
        [&self.node, &self.edge, &self.pos, &self.occ, &self.int]
    }
}

/// Encoded feature rows for many sides concatenated along the element axis.
#[derive(Clone, Debug)]
pub struct ElementTable {
    pub node: Tensor,
    pub edge: Tensor,
    pub pos: Tensor,
    pub occ: Tensor,
    pub int: Tensor,
    /// Start row of each side.
    pub offsets: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl ElementTable {
    pub fn total_rows(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.lengths.last().copied().unwrap_or(0)
    }

    pub fn bundle(&self, side: usize) -> Result<FeatureBundle> {
        let (start, len) = (self.offsets[side], self.lengths[side]);
        Ok(FeatureBundle {
            node: self.node.narrow(0, start, len)?,
            edge: self.edge.narrow(0, start, len)?,
            pos: self.pos.narrow(0, start, len)?,
            occ: self.occ.narrow(0, start, len)?,
            int: self.int.narrow(0, start, len)?,
            length: len,
        })
    }
}

/// Trainable feature encoders plus the feature configuration.
#[derive(Clone, Debug)]
pub struct FeatureBuilder {
    pub time: TimeEncoder,
    pub intersect: IntersectEncoder,
    pub config: FeatureConfig,
    dtype: DType,
}

impl FeatureBuilder {
    pub fn new(store: &mut ParamStore, config: &FeatureConfig, num_snapshots: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            time: TimeEncoder::new(store, "time", config.d_p)?,
            intersect: IntersectEncoder::new(
                store,
                "intersect",
                config.intersect_mode,
                num_snapshots,
                config.d_i,
            )?,
            config: config.clone(),
            dtype: store.dtype(),
        })
    }

    /// Gather raw inputs for both sides of `(i, j)` at `t`.
    pub fn gather_pair(
        &self,
        g: &TemporalGraph,
        i: NodeId,
        j: NodeId,
        t: Snapshot,
    ) -> Result<(RawSide, RawSide)> {
        Ok((
            RawSide::gather(g, i, j, t, self.config.max_len)?,
            RawSide::gather(g, j, i, t, self.config.max_len)?,
        ))
    }

    /// Encode any number of sides into one concatenated table.
    pub fn encode_sides(&self, sides: &[&RawSide]) -> Result<ElementTable> {
        let dev = Device::Cpu;
        let first = sides
            .first()
            .ok_or_else(|| Error::Empty("no sides to encode".into()))?;
        let (d_n, d_e, t) = (first.node_dim, first.edge_dim, first.num_snapshots);
        let mut offsets = Vec::with_capacity(sides.len());
        let mut lengths = Vec::with_capacity(sides.len());
        let (mut node, mut edge, mut pos, mut occ, mut mats) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut mat_index: Vec<u32> = Vec::new();
        let mut real: Vec<f64> = Vec::new();
        let mut rows = 0usize;
        for s in sides {
            offsets.push(rows);
            lengths.push(s.len());
            rows += s.len();
            node.extend_from_slice(&s.node);
            edge.extend_from_slice(&s.edge);
            pos.extend_from_slice(&s.positions);
            occ.extend_from_slice(&s.occ);
            let base = mats.len() / (2 * t.max(1));
            for slot in &s.intersect_index {
                match slot {
                    Some(k) => {
                        mat_index.push((base + k) as u32);
                        real.push(1.0);
                    }
                    None => {
                        mat_index.push(0);
                        real.push(0.0);
                    }
                }
            }
            mats.extend_from_slice(&s.intersect);
        }
        let toggles = self.config.toggles;
        let table = |data: Vec<f32>, width: usize, on: bool| -> Result<Tensor> {
            let t = Tensor::from_vec(data, (rows, width), &dev)?.to_dtype(self.dtype)?;
            Ok(if on { t } else { t.zeros_like()? })
        };
        let node = table(node, d_n, toggles.node_edge)?;
        let edge = table(edge, d_e, toggles.node_edge)?;
        let occ = table(occ, t, toggles.occurrence)?;

        let pos = self
            .time
            .encode(&Tensor::from_vec(pos, rows, &dev)?.to_dtype(self.dtype)?)?;
        let pos = if toggles.positional { pos } else { pos.zeros_like()? };

        let num_mats = mats.len() / (2 * t.max(1));
        let int = if !toggles.intersect || num_mats == 0 {
            Tensor::zeros((rows, self.config.d_i), self.dtype, &dev)?
        } else {
            let mats = Tensor::from_vec(mats, (num_mats, 2, t), &dev)?.to_dtype(self.dtype)?;
            let encoded = self.intersect.encode_batch(&mats)?;
            let index = Tensor::from_vec(mat_index, rows, &dev)?;
            let mask = Tensor::from_vec(real, (rows, 1), &dev)?.to_dtype(self.dtype)?;
            encoded.index_select(&index, 0)?.broadcast_mul(&mask)?
        };
        Ok(ElementTable {
            node,
            edge,
            pos,
            occ,
            int,
            offsets,
            lengths,
        })
    }

    /// Bundles for `i` (rows ordered `(i, j)`) and `j` (rows ordered `(j, i)`).
    pub fn build_bundle(
        &self,
        g: &TemporalGraph,
        i: NodeId,
        j: NodeId,
        t: Snapshot,
    ) -> Result<(FeatureBundle, FeatureBundle)> {
        let (a, b) = self.gather_pair(g, i, j, t)?;
        let table = self.encode_sides(&[&a, &b])?;
        Ok((table.bundle(0)?, table.bundle(1)?))
    }
}

/// JSON-friendly dump of a bundle for inspection.
#[derive(Clone, Debug, Serialize)]
pub struct BundleDump {
    pub length: usize,
    pub neighbors: Vec<NodeId>,
    pub snapshots: Vec<Snapshot>,
    pub node: Vec<Vec<f64>>,
    pub edge: Vec<Vec<f64>>,
    pub pos: Vec<Vec<f64>>,
    pub occ: Vec<Vec<f64>>,
    pub int: Vec<Vec<f64>>,
}

impl BundleDump {
    pub fn new(raw: &RawSide, bundle: &FeatureBundle) -> Result<Self> {
        let rows = |t: &Tensor| -> Result<Vec<Vec<f64>>> { Ok(t.to_dtype(DType::F64)?.to_vec2()?) };
        Ok(Self {
            length: bundle.length,
            neighbors: raw.entries.iter().map(|e| e.neighbor).collect(),
            snapshots: raw.entries.iter().map(|e| e.snapshot).collect(),
            node: rows(&bundle.node)?,
            edge: rows(&bundle.edge)?,
            pos: rows(&bundle.pos)?,
            occ: rows(&bundle.occ)?,
            int: rows(&bundle.int)?,
        })
    }
}
