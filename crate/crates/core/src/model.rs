//! The trainable network.
//!
//! Per granularity: five alignment maps bring the patched sequences to a
//! common width `d_c` and are concatenated to `5 * d_c`; the two nodes'
//! token sequences are stacked (`i` first, then `j`) and encoded by a
//! pre-norm transformer with full bidirectional attention; the output is
//! split at `lambda_i` and each side is mean-pooled. Per-granularity
//! embeddings are concatenated in patch-size order and fused, and a
//! two-layer head scores the concatenated pair.
//!
//! Batches of pairs are padded to a common token count; padded tokens are
//! masked out of attention keys and of the pooling, so a batch computes the
//! same function as scoring each pair alone. Zero padding *inside* the last
//! patch of a sequence is not masked.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{effective_dim, ElementTable, FeatureBuilder, FeatureConfig, RawSide};
use crate::graph::{NodeId, Snapshot, TemporalGraph};
use crate::nn::{dropout, Activation, Dense, LayerNorm, ParamStore};
use crate::patching::{PatchGroup, PatchPlan, PatchedBundle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_c: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_factor: usize,
    pub dropout: f64,
    pub activation: Activation,
    /// Width of the fused node embedding.
    pub output_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_c: 50,
            layers: 2,
            heads: 2,
            ffn_factor: 4,
            dropout: 0.1,
            activation: Activation::Relu,
            output_dim: 172,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_c == 0 || self.heads == 0 || self.output_dim == 0 || self.ffn_factor == 0 {
            return Err(Error::Config(
                "d_c, heads, ffn_factor and output_dim must be positive".into(),
            ));
        }
        if (5 * self.d_c) % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder width 5 * d_c = {} is not divisible by {} heads",
                5 * self.d_c,
                self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Everything needed to instantiate a [`PredictionModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub features: FeatureConfig,
    pub patch_sizes: Vec<usize>,
    pub model: ModelConfig,
    /// Dataset-dependent input widths.
    pub node_dim: usize,
    pub edge_dim: usize,
    pub num_snapshots: usize,
}

impl ModelSpec {
    pub fn for_graph(
        g: &TemporalGraph,
        features: FeatureConfig,
        patch_sizes: Vec<usize>,
        model: ModelConfig,
    ) -> Self {
        Self {
            features,
            patch_sizes,
            model,
            node_dim: g.node_dim(),
            edge_dim: g.edge_dim(),
            num_snapshots: g.num_snapshots(),
        }
    }

    pub fn plan(&self) -> Result<PatchPlan> {
        PatchPlan::new(self.patch_sizes.clone(), self.features.max_len)
    }

    /// Stable hash of every field that determines parameter shapes or the
    /// forward computation.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    norm_attn: LayerNorm,
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    norm_ffn: LayerNorm,
    ff1: Dense,
    ff2: Dense,
    heads: usize,
}

impl EncoderLayer {
    fn new(store: &mut ParamStore, name: &str, width: usize, cfg: &ModelConfig) -> Result<Self> {
        let hidden = cfg.ffn_factor * width;
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), width)?,
            q: Dense::new(store, &format!("{name}.attn.q"), width, width)?,
            k: Dense::new(store, &format!("{name}.attn.k"), width, width)?,
            v: Dense::new(store, &format!("{name}.attn.v"), width, width)?,
            o: Dense::new(store, &format!("{name}.attn.o"), width, width)?,
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), width)?,
            ff1: Dense::new(store, &format!("{name}.ffn.1"), width, hidden)?,
            ff2: Dense::new(store, &format!("{name}.ffn.2"), hidden, width)?,
            heads: cfg.heads,
        })
    }

    /// Multi-head self-attention over `[b, n, w]` with an additive key mask
    /// `[b, 1, 1, n]`.
    fn attention(
        &self,
        x: &Tensor,
        key_mask: &Tensor,
        p: f64,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (b, n, w) = x.dims3()?;
        let dh = w / self.heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, n, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?.broadcast_add(key_mask)?;
        let att = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let att = dropout(&att, p, rng.as_deref_mut())?;
        let ctx = att
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, n, w))?;
        self.o.forward(&ctx)
    }

    fn forward(
        &self,
        x: &Tensor,
        key_mask: &Tensor,
        cfg: &ModelConfig,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let p = cfg.dropout;
        let a = self.attention(&self.norm_attn.forward(x)?, key_mask, p, rng)?;
        let x = (x + dropout(&a, p, rng.as_deref_mut())?)?;
        let h = cfg.activation.apply(&self.ff1.forward(&self.norm_ffn.forward(&x)?)?)?;
        let h = dropout(&h, p, rng.as_deref_mut())?;
        let f = self.ff2.forward(&h)?;
        Ok((&x + dropout(&f, p, rng.as_deref_mut())?)?)
    }
}

/// Alignment maps plus transformer stack for one patch size.
#[derive(Clone, Debug)]
pub struct GranularityEncoder {
    pub size: usize,
    align_node: Dense,
    align_edge: Dense,
    align_pos: Dense,
    align_occ_in: Dense,
    align_occ_out: Dense,
    align_int: Dense,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
    activation: Activation,
    d_c: usize,
}

impl GranularityEncoder {
    fn new(
        store: &mut ParamStore,
        size: usize,
        widths: [usize; 5],
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let name = format!("gran{size}");
        let [d_n, d_e, d_pos, d_occ, d_int] = widths.map(|d| d * size);
        let width = 5 * cfg.d_c;
        Ok(Self {
            size,
            align_node: Dense::new(store, &format!("{name}.align.node"), d_n, cfg.d_c)?,
            align_edge: Dense::new(store, &format!("{name}.align.edge"), d_e, cfg.d_c)?,
            align_pos: Dense::new(store, &format!("{name}.align.pos"), d_pos, cfg.d_c)?,
            align_occ_in: Dense::new(store, &format!("{name}.align.occ_in"), d_occ, cfg.d_c)?,
            align_occ_out: Dense::new(store, &format!("{name}.align.occ_out"), cfg.d_c, cfg.d_c)?,
            align_int: Dense::new(store, &format!("{name}.align.int"), d_int, cfg.d_c)?,
            layers: (0..cfg.layers)
                .map(|l| EncoderLayer::new(store, &format!("{name}.layer{l}"), width, cfg))
                .collect::<Result<_>>()?,
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), width)?,
            activation: cfg.activation,
            d_c: cfg.d_c,
        })
    }

    pub fn width(&self) -> usize {
        5 * self.d_c
    }

    /// Map patched tensors `[..., lambda, size * d]` to `[..., lambda, 5 * d_c]`
    /// in the order node, edge, pos, occ, int. Patches are mapped independently.
    pub fn align(&self, patches: [&Tensor; 5]) -> Result<Tensor> {
        let act = |t: Tensor| self.activation.apply(&t);
        let [node, edge, pos, occ, int] = patches;
        let parts = [
            act(self.align_node.forward(node)?)?,
            act(self.align_edge.forward(edge)?)?,
            act(self.align_pos.forward(pos)?)?,
            act(self.align_occ_out.forward(&self.align_occ_in.forward(occ)?.relu()?)?)?,
            act(self.align_int.forward(int)?)?,
        ];
        Ok(Tensor::cat(&parts, D::Minus1)?)
    }

    pub fn align_group(&self, g: &PatchGroup) -> Result<Tensor> {
        self.align(g.tensors())
    }

    /// Encode a padded pair batch; returns mean-pooled `(emb_i, emb_j)`, each
    /// `[b, 5 * d_c]`.
    pub fn forward(
        &self,
        batch: &PatchedBatch,
        cfg: &ModelConfig,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, Tensor)> {
        let mut x = self.align(batch.tensors())?;
        let (b, n, _) = x.dims3()?;
        let dtype = x.dtype();
        let dev = x.device().clone();
        let mut mask = vec![0f64; b * n];
        let mut pool_i = vec![0f64; b * n];
        let mut pool_j = vec![0f64; b * n];
        for s in 0..b {
            let (li, lj) = (batch.lens_i[s], batch.lens_j[s]);
            for tok in 0..n {
                let k = s * n + tok;
                if tok < li {
                    pool_i[k] = 1.0 / li as f64;
                } else if tok < li + lj {
                    pool_j[k] = 1.0 / lj as f64;
                } else {
                    mask[k] = -1e9;
                }
            }
        }
        let key_mask = Tensor::from_vec(mask, (b, 1, 1, n), &dev)?.to_dtype(dtype)?;
        for layer in &self.layers {
            x = layer.forward(&x, &key_mask, cfg, rng)?;
        }
        let h = self.final_norm.forward(&x)?;
        let pool = |w: Vec<f64>| -> Result<Tensor> {
            let w = Tensor::from_vec(w, (b, n, 1), &dev)?.to_dtype(dtype)?;
            Ok(h.broadcast_mul(&w)?.sum(1)?)
        };
        Ok((pool(pool_i)?, pool(pool_j)?))
    }
}

/// One granularity of a batch of stacked pairs: five `[b, tokens, size * d]`
/// tensors where sample `s` holds `lens_i[s]` tokens of `i`, then
/// `lens_j[s]` tokens of `j`, then masked padding.
#[derive(Clone, Debug)]
pub struct PatchedBatch {
    pub size: usize,
    pub node: Tensor,
    pub edge: Tensor,
    pub pos: Tensor,
    pub occ: Tensor,
    pub int: Tensor,
    pub lens_i: Vec<usize>,
    pub lens_j: Vec<usize>,
}

impl PatchedBatch {
    pub fn tensors(&self) -> [&Tensor; 5] {
        [&self.node, &self.edge, &self.pos, &self.occ, &self.int]
    }

    pub fn batch_size(&self) -> usize {
        self.lens_i.len()
    }

    /// Stack two single-node patch groups into a batch of one.
    pub fn from_pair(gi: &PatchGroup, gj: &PatchGroup) -> Result<Self> {
        if gi.size != gj.size {
            return Err(Error::Shape(format!(
                "pairing patch sizes {} and {}",
                gi.size, gj.size
            )));
        }
        let stack = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
            Ok(Tensor::cat(&[a, b], 0)?.unsqueeze(0)?)
        };
        Ok(Self {
            size: gi.size,
            node: stack(&gi.node, &gj.node)?,
            edge: stack(&gi.edge, &gj.edge)?,
            pos: stack(&gi.pos, &gj.pos)?,
            occ: stack(&gi.occ, &gj.occ)?,
            int: stack(&gi.int, &gj.int)?,
            lens_i: vec![gi.num_patches],
            lens_j: vec![gj.num_patches],
        })
    }

    /// Patch and stack pairs of sides straight from an element table with a
    /// single gather per feature. `pairs` index sides of `table`.
    pub fn gather(table: &ElementTable, pairs: &[(usize, usize)], size: usize) -> Result<Self> {
        let zero_row = table.total_rows();
        let lam = |side: usize| PatchPlan::num_patches(table.lengths[side], size);
        let tokens = pairs
            .iter()
            .map(|&(a, b)| lam(a) + lam(b))
            .max()
            .unwrap_or(0);
        let mut index = Vec::with_capacity(pairs.len() * tokens * size);
        let mut lens_i = Vec::with_capacity(pairs.len());
        let mut lens_j = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            let (la, lb) = (lam(a), lam(b));
            lens_i.push(la);
            lens_j.push(lb);
            for tok in 0..tokens {
                let side = if tok < la {
                    Some((a, tok))
                } else if tok < la + lb {
                    Some((b, tok - la))
                } else {
                    None
                };
                for slot in 0..size {
                    let row = side.and_then(|(s, p)| {
                        let e = p * size + slot;
                        (e < table.lengths[s]).then(|| table.offsets[s] + e)
                    });
                    index.push(row.unwrap_or(zero_row) as u32);
                }
            }
        }
        let n = pairs.len();
        let index = Tensor::from_vec(index, n * tokens * size, &Device::Cpu)?;
        let take = |t: &Tensor| -> Result<Tensor> {
            let d = t.dim(1)?;
            let padded = Tensor::cat(&[t, &Tensor::zeros((1, d), t.dtype(), t.device())?], 0)?;
            Ok(padded
                .index_select(&index, 0)?
                .reshape((n, tokens, size * d))?)
        };
        Ok(Self {
            size,
            node: take(&table.node)?,
            edge: take(&table.edge)?,
            pos: take(&table.pos)?,
            occ: take(&table.occ)?,
            int: take(&table.int)?,
            lens_i,
            lens_j,
        })
    }
}

/// A scored query `(i, j, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairQuery {
    pub i: NodeId,
    pub j: NodeId,
    pub t: Snapshot,
}

pub struct PredictionModel {
    store: ParamStore,
    spec: ModelSpec,
    plan: PatchPlan,
    pub features: FeatureBuilder,
    encoders: Vec<GranularityEncoder>,
    fusion: Dense,
    head_hidden: Dense,
    head_out: Dense,
}

impl PredictionModel {
    pub fn new(spec: &ModelSpec, seed: u64, dtype: DType) -> Result<Self> {
        spec.model.validate()?;
        spec.features.validate()?;
        let plan = spec.plan()?;
        let mut store = ParamStore::new(seed, dtype);
        let features = FeatureBuilder::new(&mut store, &spec.features, spec.num_snapshots)?;
        let widths = [
            effective_dim(spec.node_dim),
            effective_dim(spec.edge_dim),
            2 * spec.features.d_p,
            spec.num_snapshots,
            spec.features.d_i,
        ];
        let encoders = plan
            .patch_sizes
            .iter()
            .map(|&s| GranularityEncoder::new(&mut store, s, widths, &spec.model))
            .collect::<Result<Vec<_>>>()?;
        let cfg = &spec.model;
        let fused_in = encoders.len() * 5 * cfg.d_c;
        let fusion = Dense::new(&mut store, "fusion", fused_in, cfg.output_dim)?;
        let head_hidden = Dense::new(&mut store, "head.hidden", 2 * cfg.output_dim, cfg.output_dim)?;
        let head_out = Dense::new(&mut store, "head.out", cfg.output_dim, 1)?;
        Ok(Self {
            store,
            spec: spec.clone(),
            plan,
            features,
            encoders,
            fusion,
            head_hidden,
            head_out,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn plan(&self) -> &PatchPlan {
        &self.plan
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn encoders(&self) -> &[GranularityEncoder] {
        &self.encoders
    }

    pub fn encoder(&self, size: usize) -> Option<&GranularityEncoder> {
        self.encoders.iter().find(|e| e.size == size)
    }

    /// Per-granularity encodings to fused `[b, output_dim]` embeddings.
    fn embed(
        &self,
        batches: &[PatchedBatch],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, Tensor)> {
        let mut emb_i = Vec::with_capacity(batches.len());
        let mut emb_j = Vec::with_capacity(batches.len());
        for (enc, batch) in self.encoders.iter().zip(batches) {
            if enc.size != batch.size {
                return Err(Error::Shape(format!(
                    "batch at patch size {} fed to encoder for size {}",
                    batch.size, enc.size
                )));
            }
            let (a, b) = enc.forward(batch, &self.spec.model, rng)?;
            emb_i.push(a);
            emb_j.push(b);
        }
        let act = self.spec.model.activation;
        let fuse = |parts: Vec<Tensor>| -> Result<Tensor> {
            act.apply(&self.fusion.forward(&Tensor::cat(&parts, D::Minus1)?)?)
        };
        Ok((fuse(emb_i)?, fuse(emb_j)?))
    }

    /// Final embeddings of a single pair from its patched bundles.
    pub fn encode_pair(
        &self,
        bundle_i: &PatchedBundle,
        bundle_j: &PatchedBundle,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, Tensor)> {
        if bundle_i.sizes() != self.plan.patch_sizes || bundle_j.sizes() != self.plan.patch_sizes {
            return Err(Error::Shape(format!(
                "bundles patched with {:?} / {:?}, model expects {:?}",
                bundle_i.sizes(),
                bundle_j.sizes(),
                self.plan.patch_sizes
            )));
        }
        let batches = bundle_i
            .groups
            .iter()
            .zip(&bundle_j.groups)
            .map(|(a, b)| PatchedBatch::from_pair(a, b))
            .collect::<Result<Vec<_>>>()?;
        let (a, b) = self.embed(&batches, &mut rng)?;
        Ok((a.squeeze(0)?, b.squeeze(0)?))
    }

    /// Head logit for final embeddings; accepts `[d]` or `[b, d]` inputs.
    pub fn score(&self, emb_i: &Tensor, emb_j: &Tensor) -> Result<Tensor> {
        if emb_i.rank() == 1 {
            return self.score(&emb_i.unsqueeze(0)?, &emb_j.unsqueeze(0)?)?.squeeze(0).map_err(Into::into);
        }
        let x = Tensor::cat(&[emb_i, emb_j], D::Minus1)?;
        let h = self
            .spec
            .model
            .activation
            .apply(&self.head_hidden.forward(&x)?)?;
        Ok(self.head_out.forward(&h)?.squeeze(D::Minus1)?)
    }

    /// Logits `[b]` for a batch of queries, assembling features on the fly.
    pub fn forward_queries(
        &self,
        g: &TemporalGraph,
        queries: &[PairQuery],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let mut sides = Vec::with_capacity(2 * queries.len());
        for q in queries {
            let (a, b) = self.features.gather_pair(g, q.i, q.j, q.t)?;
            sides.push(a);
            sides.push(b);
        }
        self.forward_sides(&sides, &mut rng)
    }

    /// Logits for pre-gathered sides laid out as `[i_0, j_0, i_1, j_1, ...]`.
    pub fn forward_sides(
        &self,
        sides: &[RawSide],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        if sides.is_empty() || sides.len() % 2 != 0 {
            return Err(Error::Shape(format!(
                "expected an even, non-zero number of sides, got {}",
                sides.len()
            )));
        }
        let refs: Vec<&RawSide> = sides.iter().collect();
        let table = self.features.encode_sides(&refs)?;
        let pairs: Vec<(usize, usize)> = (0..sides.len() / 2).map(|k| (2 * k, 2 * k + 1)).collect();
        let batches = self
            .plan
            .patch_sizes
            .iter()
            .map(|&s| PatchedBatch::gather(&table, &pairs, s))
            .collect::<Result<Vec<_>>>()?;
        let (ei, ej) = self.embed(&batches, rng)?;
        self.score(&ei, &ej)
    }

    /// Logits as `f64`, evaluated without dropout, in chunks of `chunk` pairs.
    pub fn score_queries(&self, g: &TemporalGraph, queries: &[PairQuery], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(queries.len());
        for part in queries.chunks(chunk.max(1)) {
            let logits = self.forward_queries(g, part, None)?;
            out.extend(logits.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    /// Write parameters plus the spec and its fingerprint to one file.
    pub fn save(&self, path: &Path, extra: HashMap<String, String>) -> Result<()> {
        let mut meta = extra;
        meta.insert("fingerprint".into(), self.spec.fingerprint());
        meta.insert("spec".into(), serde_json::to_string(&self.spec)?);
        self.store.save(path, meta)
    }

    /// Restore parameters written by [`PredictionModel::save`]; refuses files
    /// whose fingerprint differs from this model's spec.
    pub fn load(&self, path: &Path) -> Result<HashMap<String, String>> {
        let (tensors, meta) = ParamStore::read_file(path)?;
        let expected = self.spec.fingerprint();
        match meta.get("fingerprint") {
            Some(f) if *f == expected => {}
            Some(f) => {
                return Err(Error::Checkpoint(format!(
                    "{}: fingerprint {f} does not match configuration fingerprint {expected}",
                    path.display()
                )))
            }
            None => {
                return Err(Error::Checkpoint(format!(
                    "{}: no configuration fingerprint",
                    path.display()
                )))
            }
        }
        self.store.restore(&tensors)?;
        Ok(meta)
    }

    /// Read the spec stored in a checkpoint and build a model from it.
    pub fn from_checkpoint(path: &Path, dtype: DType) -> Result<Self> {
        let (_, meta) = ParamStore::read_file(path)?;
        let spec: ModelSpec = serde_json::from_str(
            meta.get("spec")
                .ok_or_else(|| Error::Checkpoint(format!("{}: no spec", path.display())))?,
        )?;
        let model = Self::new(&spec, 0, dtype)?;
        model.load(path)?;
        Ok(model)
    }
}

/// Mean binary cross-entropy on logits, computed stably as
/// `max(x, 0) - x y + log(1 + exp(-|x|))`.
pub fn bce_with_logits(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let labels = labels.to_dtype(logits.dtype())?;
    let softplus = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    let per = ((logits.relu()? - (logits * labels)?)? + softplus)?;
    Ok(per.mean_all()?)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
