//! Ingest a small edge list, bucket it into snapshots and split it
//! chronologically.
//!
//!     cargo run --example ingest_and_split

use std::io::Write;

use patchlink::graph::{ingest, Bucketing, Column, IngestSchema};
use patchlink::graph::chronological_split;

fn main() -> patchlink::Result<()> {
    let mut file = tempfile::NamedTempFile::new().expect("temp file");
    // src,dst,timestamp,weight
    for k in 0..120u32 {
        let (s, d) = (k % 7, (k * 3 + 1) % 11);
        writeln!(file, "u{s},u{d},{},{}", 1_000 + 37 * k, (k % 5) as f32 - 2.0).unwrap();
    }
    file.flush().unwrap();

    let schema = IngestSchema {
        edge_feature_columns: vec![Column::Index(3)],
        ..IngestSchema::default()
    };
    let ingested = ingest(file.path(), &schema, &Bucketing::FixedCount { count: 12 })?;
    let g = &ingested.graph;
    println!(
        "{} nodes, {} events, {} snapshots, edge dim {}",
        g.num_nodes(),
        g.num_events(),
        g.num_snapshots(),
        g.edge_dim()
    );
    println!("events per snapshot: {:?}", g.snapshot_counts());
    println!("dense id 0 is {:?}", ingested.id_map[0]);

    let split = chronological_split(g, (0.8, 0.1, 0.1))?;
    for (name, r) in [("train", split.train), ("val", split.val), ("test", split.test)] {
        println!("{name}: snapshots {}..={} ({} events)", r.start, r.end, g.events_in(r).len());
    }
    Ok(())
}
