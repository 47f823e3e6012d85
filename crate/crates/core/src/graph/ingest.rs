use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GraphBuilder, TemporalGraph};
use crate::error::{Error, Result};

/// A column selected by zero-based position or by header name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    #[default]
    Comma,
    Tab,
    /// Runs of spaces or tabs.
    Whitespace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSchema {
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub has_header: bool,
    /// Lines starting with this prefix are skipped.
    #[serde(default)]
    pub comment_prefix: Option<String>,
    pub source: Column,
    pub destination: Column,
    pub timestamp: Column,
    /// `strftime`-style pattern for date-time timestamps, e.g.
    /// `"%Y-%m-%d %H:%M:%S"` (read as UTC seconds). Numeric when absent.
    #[serde(default)]
    pub timestamp_format: Option<String>,
    #[serde(default)]
    pub edge_feature_columns: Vec<Column>,
    /// Dimension of the zero node-feature bank.
    #[serde(default = "one")]
    pub node_feature_dim: usize,
    /// Dimension of the zero edge features used when no feature columns are named.
    #[serde(default = "one")]
    pub default_edge_dim: usize,
}

fn one() -> usize {
    1
}

impl Default for IngestSchema {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Comma,
            has_header: false,
            comment_prefix: None,
            source: Column::Index(0),
            destination: Column::Index(1),
            timestamp: Column::Index(2),
            timestamp_format: None,
            edge_feature_columns: Vec::new(),
            node_feature_dim: 1,
            default_edge_dim: 1,
        }
    }
}

/// How raw timestamps map to snapshot indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bucketing {
    /// `count` equal-width intervals over the timestamp range; empty
    /// intervals are dropped and the rest renumbered `1..=T`.
    FixedCount { count: i64 },
    /// Intervals of `seconds` from the first timestamp; `T = ceil(span / seconds)`.
    FixedDuration { seconds: f64 },
}

impl Bucketing {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Bucketing::FixedCount { count } if count <= 0 => Err(Error::Config(format!(
                "fixed-count bucketing needs a positive count, got {count}"
            ))),
            Bucketing::FixedDuration { seconds } if !(seconds > 0.0) || !seconds.is_finite() => {
                Err(Error::Config(format!(
                    "fixed-duration bucketing needs a positive duration, got {seconds}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Snapshot index (1-based) for every timestamp, plus `T`.
    pub fn assign(&self, timestamps: &[f64]) -> Result<(Vec<usize>, usize)> {
        self.validate()?;
        if timestamps.is_empty() {
            return Ok((Vec::new(), 0));
        }
        let min = timestamps.iter().copied().fold(f64::INFINITY, f64::min);
        let max = timestamps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        match *self {
            Bucketing::FixedCount { count } => {
                let k = count as usize;
                let raw: Vec<usize> = timestamps
                    .iter()
                    .map(|&ts| {
                        if span == 0.0 {
                            0
                        } else {
                            (((ts - min) * k as f64 / span).floor() as usize).min(k - 1)
                        }
                    })
                    .collect();
                let mut occupied = vec![false; k];
                raw.iter().for_each(|&b| occupied[b] = true);
                let mut renumber = vec![0; k];
                let mut next = 0;
                for (b, &used) in occupied.iter().enumerate() {
                    if used {
                        next += 1;
                        renumber[b] = next;
                    }
                }
                Ok((raw.iter().map(|&b| renumber[b]).collect(), next))
            }
            Bucketing::FixedDuration { seconds } => {
                let t = ((span / seconds).ceil() as usize).max(1);
                let snaps = timestamps
                    .iter()
                    .map(|&ts| (((ts - min) / seconds).floor() as usize).min(t - 1) + 1)
                    .collect();
                Ok((snaps, t))
            }
        }
    }
}

/// A freshly ingested graph and the original id of every dense node id.
#[derive(Clone, Debug)]
pub struct IngestedGraph {
    pub graph: TemporalGraph,
    pub id_map: Vec<String>,
}

struct Row {
    line: u64,
    source: String,
    destination: String,
    timestamp: f64,
    feature: Vec<f32>,
}

struct Resolved {
    source: usize,
    destination: usize,
    timestamp: usize,
    timestamp_format: Option<String>,
    features: Vec<usize>,
}

fn resolve(schema: &IngestSchema, header: Option<&[String]>, path: &Path) -> Result<Resolved> {
    let find = |c: &Column| -> Result<usize> {
        match c {
            Column::Index(i) => Ok(*i),
            Column::Name(name) => header
                .and_then(|h| h.iter().position(|x| x == name))
                .ok_or_else(|| Error::Ingest {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("column {name:?} not found in header"),
                }),
        }
    };
    Ok(Resolved {
        source: find(&schema.source)?,
        destination: find(&schema.destination)?,
        timestamp: find(&schema.timestamp)?,
        timestamp_format: schema.timestamp_format.clone(),
        features: schema
            .edge_feature_columns
            .iter()
            .map(find)
            .collect::<Result<_>>()?,
    })
}

fn parse_row(fields: &[&str], cols: &Resolved, line: u64, path: &Path) -> Result<Row> {
    let bad = |message: String| Error::Ingest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let get = |i: usize| -> Result<&str> {
        fields
            .get(i)
            .map(|s| s.trim())
            .ok_or_else(|| bad(format!("missing column {i} (row has {} fields)", fields.len())))
    };
    let source = get(cols.source)?.to_string();
    let destination = get(cols.destination)?.to_string();
    if source.is_empty() || destination.is_empty() {
        return Err(bad("empty node id".into()));
    }
    let ts_raw = get(cols.timestamp)?;
    let timestamp: f64 = match &cols.timestamp_format {
        None => ts_raw
            .parse()
            .map_err(|_| bad(format!("timestamp {ts_raw:?} is not a number")))?,
        Some(fmt) => chrono::NaiveDateTime::parse_from_str(ts_raw, fmt)
            .map_err(|e| bad(format!("timestamp {ts_raw:?} does not match {fmt:?}: {e}")))?
            .and_utc()
            .timestamp() as f64,
    };
    if !timestamp.is_finite() {
        return Err(bad(format!("timestamp {ts_raw:?} is not finite")));
    }
    let feature = cols
        .features
        .iter()
        .map(|&c| {
            let raw = get(c)?;
            raw.parse::<f32>()
                .map_err(|_| bad(format!("edge feature {raw:?} in column {c} is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Row {
        line,
        source,
        destination,
        timestamp,
        feature,
    })
}

fn read_rows(path: &Path, schema: &IngestSchema) -> Result<Vec<Row>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let skip = |s: &str| {
        s.trim().is_empty()
            || schema
                .comment_prefix
                .as_deref()
                .is_some_and(|p| s.trim_start().starts_with(p))
    };
    let mut rows = Vec::new();
    match schema.delimiter {
        Delimiter::Whitespace => {
            let mut cols = None;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line_no = idx as u64 + 1;
                let line = line.map_err(|e| Error::io(path, e))?;
                if skip(&line) {
                    continue;
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                if cols.is_none() {
                    let header: Option<Vec<String>> = schema
                        .has_header
                        .then(|| fields.iter().map(|s| s.to_string()).collect());
                    cols = Some(resolve(schema, header.as_deref(), path)?);
                    if header.is_some() {
                        continue;
                    }
                }
                rows.push(parse_row(&fields, cols.as_ref().unwrap(), line_no, path)?);
            }
        }
        Delimiter::Comma | Delimiter::Tab => {
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(if schema.delimiter == Delimiter::Tab { b'\t' } else { b',' })
                .has_headers(schema.has_header)
                .flexible(true)
                .trim(csv::Trim::All)
                .comment(
                    schema
                        .comment_prefix
                        .as_deref()
                        .and_then(|p| p.bytes().next()),
                )
                .from_reader(file);
            let header: Option<Vec<String>> = if schema.has_header {
                let h = reader.headers().map_err(|e| Error::Ingest {
                    path: path.to_path_buf(),
                    line: 1,
                    message: e.to_string(),
                })?;
                Some(h.iter().map(str::to_string).collect())
            } else {
                None
            };
            let cols = resolve(schema, header.as_deref(), path)?;
            for record in reader.records() {
                let record = record.map_err(|e| Error::Ingest {
                    path: path.to_path_buf(),
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    message: e.to_string(),
                })?;
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                let fields: Vec<&str> = record.iter().collect();
                if fields.iter().all(|f| f.is_empty()) {
                    continue;
                }
                rows.push(parse_row(&fields, &cols, line, path)?);
            }
        }
    }
    Ok(rows)
}

/// Read a delimited edge list into a [`TemporalGraph`].
///
/// Node ids are re-indexed densely in order of first appearance; edge ids
/// follow file order.
pub fn ingest(path: &Path, schema: &IngestSchema, bucketing: &Bucketing) -> Result<IngestedGraph> {
    bucketing.validate()?;
    let rows = read_rows(path, schema)?;
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} contains no edge rows", path.display())));
    }
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut id_map = Vec::new();
    let mut dense = |raw: &str| -> usize {
        if let Some(&i) = ids.get(raw) {
            return i;
        }
        let i = id_map.len();
        id_map.push(raw.to_string());
        ids.insert(raw.to_string(), i);
        i
    };
    let endpoints: Vec<(usize, usize)> = rows
        .iter()
        .map(|r| (dense(&r.source), dense(&r.destination)))
        .collect();
    let timestamps: Vec<f64> = rows.iter().map(|r| r.timestamp).collect();
    let (snapshots, num_snapshots) = bucketing.assign(&timestamps)?;

    let edge_dim = if schema.edge_feature_columns.is_empty() {
        schema.default_edge_dim
    } else {
        schema.edge_feature_columns.len()
    };
    let mut builder = GraphBuilder::new(id_map.len(), num_snapshots, schema.node_feature_dim, edge_dim);
    for ((row, &(s, d)), &snap) in rows.iter().zip(&endpoints).zip(&snapshots) {
        builder
            .push(s, d, snap, row.timestamp, &row.feature)
            .map_err(|e| Error::Ingest {
                path: path.to_path_buf(),
                line: row.line,
                message: e.to_string(),
            })?;
    }
    Ok(IngestedGraph {
        graph: builder.build(),
        id_map,
    })
}
