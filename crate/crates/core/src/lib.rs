//! Future link prediction on discrete-time dynamic graphs.
//!
//! Each node of a candidate pair `(i, j)` is described by its first-hop
//! neighbor history before the prediction snapshot. Five aligned feature
//! sequences (node, edge, snapshot-position, occurrence, and pair-intersect)
//! are cut into patches at several sizes, each size feeding its own
//! transformer encoder over the stacked pair. The per-size node embeddings
//! are fused and scored by a two-layer head.
//!
//! The `examples/` directory walks through each stage; the `patchlink`
//! binary wraps dataset preparation, training, and evaluation.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod graph;
pub mod model;
pub mod nn;
pub mod patching;
pub mod training;

pub use error::{Error, Result};
