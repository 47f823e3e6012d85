//! Ranking and classification metrics.
//!
//! MRR ranks each positive `(i, j, t)` against `k` negatives `(i, j', t)`
//! with `j'` drawn uniformly from all nodes except `j` (collisions with other
//! true edges are allowed). Ties take the average rank. AUC and AP score each
//! positive against one negative drawn the same way from a separate stream.
//!
//! Negatives depend only on `(seed, edge_id)`, so the candidate sets are
//! fixed for a test edge regardless of evaluation order or batching.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeEvent, NodeId, SnapshotRange, TemporalGraph};
use crate::model::{PairQuery, PredictionModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Negatives ranked against each positive for MRR.
    pub negatives: usize,
    /// Negatives per positive for AUC / AP.
    pub auc_negatives: usize,
    pub seed: u64,
    /// Pairs scored per forward pass.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            negatives: 1000,
            auc_negatives: 1,
            seed: 0,
            batch_size: 256,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives == 0 || self.auc_negatives == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "evaluation negatives, auc_negatives and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// `1 + #{negatives > positive} + #{negatives == positive} / 2`.
pub fn rank(positive: f64, negatives: &[f64]) -> f64 {
    let greater = negatives.iter().filter(|&&s| s > positive).count();
    let ties = negatives.iter().filter(|&&s| s == positive).count();
    1.0 + greater as f64 + 0.5 * ties as f64
}

pub fn mean_reciprocal_rank(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("no ranked queries".into()));
    }
    Ok(compensated_sum(ranks.iter().map(|r| 1.0 / r)) / ranks.len() as f64)
}

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Shape("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Empty(
            "AUC and AP need at least one positive and one negative".into(),
        ));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for idx in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[idx] => g.push(idx),
            _ => groups.push(vec![idx]),
        }
    }
    groups
}

/// Area under the ROC curve via the midrank (Mann–Whitney) statistic.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    // ascending midranks
    let mut groups = tie_groups(scores);
    groups.reverse();
    let mut rank_sum = 0.0;
    let mut next = 1.0;
    for g in &groups {
        let mid = next + (g.len() as f64 - 1.0) / 2.0;
        rank_sum += mid * g.iter().filter(|&&k| labels[k]).count() as f64;
        next += g.len() as f64;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: sum of precision times recall increment over the
/// descending sweep, one step per distinct score.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_labels(scores, labels)?;
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    for g in tie_groups(scores) {
        let hits = g.iter().filter(|&&k| labels[k]).count();
        tp += hits;
        seen += g.len();
        ap += (hits as f64 / pos as f64) * (tp as f64 / seen as f64);
    }
    Ok(ap)
}

/// `k` destinations uniform over `[0, num_nodes)` minus `exclude`.
pub fn uniform_excluding(
    num_nodes: usize,
    exclude: NodeId,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NodeId>> {
    if num_nodes < 2 {
        return Err(Error::Config(format!(
            "negative sampling needs at least 2 nodes, graph has {num_nodes}"
        )));
    }
    Ok((0..k)
        .map(|_| {
            let d = rng.gen_range(0..num_nodes - 1);
            if d >= exclude {
                d + 1
            } else {
                d
            }
        })
        .collect())
}

const MRR_STREAM: u64 = 0;
const AUC_STREAM: u64 = 1 << 62;

fn edge_rng(seed: u64, stream: u64, edge_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream | edge_id as u64);
    rng
}

/// The fixed MRR negatives of one test edge.
pub fn ranking_negatives(g: &TemporalGraph, e: &EdgeEvent, k: usize, seed: u64) -> Result<Vec<NodeId>> {
    uniform_excluding(g.num_nodes(), e.destination, k, &mut edge_rng(seed, MRR_STREAM, e.edge_id))
}

/// The fixed AUC/AP negatives of one test edge.
pub fn classification_negatives(
    g: &TemporalGraph,
    e: &EdgeEvent,
    k: usize,
    seed: u64,
) -> Result<Vec<NodeId>> {
    uniform_excluding(g.num_nodes(), e.destination, k, &mut edge_rng(seed, AUC_STREAM, e.edge_id))
}

fn positives(g: &TemporalGraph, range: SnapshotRange) -> Result<&[EdgeEvent]> {
    let events = g.events_in(range);
    if events.is_empty() {
        return Err(Error::Empty(format!(
            "no events in snapshots {}..={}",
            range.start, range.end
        )));
    }
    Ok(events)
}

/// Anything that scores `(i, j, t)` queries; lets the protocol run against
/// the model or a stand-in.
pub trait Scorer {
    fn score(&self, g: &TemporalGraph, queries: &[PairQuery]) -> Result<Vec<f64>>;
}

/// Adapts a model to [`Scorer`], scoring in chunks of `batch_size`.
pub struct ModelScorer<'a> {
    pub model: &'a PredictionModel,
    pub batch_size: usize,
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, g: &TemporalGraph, queries: &[PairQuery]) -> Result<Vec<f64>> {
        self.model.score_queries(g, queries, self.batch_size)
    }
}

impl<F: Fn(&PairQuery) -> f64> Scorer for F {
    fn score(&self, _: &TemporalGraph, queries: &[PairQuery]) -> Result<Vec<f64>> {
        Ok(queries.iter().map(self).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub i: NodeId,
    pub j: NodeId,
    pub t: usize,
    pub rank: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MrrReport {
    pub mrr: f64,
    pub queries: Vec<QueryRank>,
}

pub fn mrr(
    scorer: &dyn Scorer,
    g: &TemporalGraph,
    range: SnapshotRange,
    cfg: &EvalConfig,
) -> Result<MrrReport> {
    cfg.validate()?;
    let mut queries = Vec::new();
    for e in positives(g, range)? {
        let (i, t) = (e.source, e.snapshot);
        let mut cands = vec![PairQuery { i, j: e.destination, t }];
        cands.extend(
            ranking_negatives(g, e, cfg.negatives, cfg.seed)?
                .into_iter()
                .map(|j| PairQuery { i, j, t }),
        );
        let scores = scorer.score(g, &cands)?;
        queries.push(QueryRank {
            i,
            j: e.destination,
            t,
            rank: rank(scores[0], &scores[1..]),
        });
    }
    let ranks: Vec<f64> = queries.iter().map(|q| q.rank).collect();
    Ok(MrrReport {
        mrr: mean_reciprocal_rank(&ranks)?,
        queries,
    })
}

/// Scores and labels of every positive in `range` plus its seeded negatives.
pub fn classification_set(
    scorer: &dyn Scorer,
    g: &TemporalGraph,
    range: SnapshotRange,
    negatives: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut queries = Vec::new();
    let mut labels = Vec::new();
    for e in positives(g, range)? {
        let (i, t) = (e.source, e.snapshot);
        queries.push(PairQuery { i, j: e.destination, t });
        labels.push(true);
        for j in classification_negatives(g, e, negatives, seed)? {
            queries.push(PairQuery { i, j, t });
            labels.push(false);
        }
    }
    Ok((scorer.score(g, &queries)?, labels))
}

pub fn auc_ap(
    scorer: &dyn Scorer,
    g: &TemporalGraph,
    range: SnapshotRange,
    cfg: &EvalConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    let (scores, labels) = classification_set(scorer, g, range, cfg.auc_negatives, cfg.seed)?;
    Ok((auc_roc(&scores, &labels)?, average_precision(&scores, &labels)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    /// Standard error of the per-query reciprocal ranks; the expected
    /// spread of `mrr` across evaluation seeds.
    pub mrr_stderr: f64,
    pub auc_roc: f64,
    pub ap: f64,
    pub n_queries: usize,
    pub seed: u64,
    pub negatives_per_query: usize,
}

/// Full protocol on one range: MRR, AUC-ROC and AP.
pub fn evaluate(
    scorer: &dyn Scorer,
    g: &TemporalGraph,
    range: SnapshotRange,
    cfg: &EvalConfig,
) -> Result<(Metrics, Vec<QueryRank>)> {
    let report = mrr(scorer, g, range, cfg)?;
    let (auc, ap) = auc_ap(scorer, g, range, cfg)?;
    let n = report.queries.len() as f64;
    let var = compensated_sum(report.queries.iter().map(|q| (1.0 / q.rank - report.mrr).powi(2)))
        / (n - 1.0).max(1.0);
    Ok((
        Metrics {
            mrr: report.mrr,
            mrr_stderr: (var / n).sqrt(),
            auc_roc: auc,
            ap,
            n_queries: report.queries.len(),
            seed: cfg.seed,
            negatives_per_query: cfg.negatives,
        },
        report.queries,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Per-query audit file with columns `i,j,t,rank`.
pub fn write_query_csv(path: &Path, queries: &[QueryRank]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    for q in queries {
        w.serialize(q).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Same content as [`write_query_csv`] to any writer.
pub fn query_csv_string(queries: &[QueryRank]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for q in queries {
        w.serialize(q).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let mut bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    bytes.flush().ok();
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}
