//! Seeded generator of small dynamic graphs with learnable structure:
//! nodes fall into communities, a fixed pool of "friendship" pairs interacts
//! repeatedly over time, and the remaining events are random pairs drawn
//! within a community.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GraphBuilder, TemporalGraph};

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_events: usize,
    pub num_snapshots: usize,
    pub communities: usize,
    /// Friendship pairs per node.
    pub friends_per_node: usize,
    /// Probability an event re-uses a friendship pair.
    pub repeat_prob: f64,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 60,
            num_events: 500,
            num_snapshots: 10,
            communities: 4,
            friends_per_node: 2,
            repeat_prob: 0.8,
            node_dim: 1,
            edge_dim: 1,
            seed: 7,
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> TemporalGraph {
    assert!(spec.num_nodes >= 2 && spec.num_snapshots >= 1 && spec.communities >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let community = |n: usize| n % spec.communities;
    let members: Vec<Vec<usize>> = (0..spec.communities)
        .map(|c| (0..spec.num_nodes).filter(|&n| community(n) == c).collect())
        .collect();
    let pick_partner = |rng: &mut ChaCha8Rng, n: usize| -> usize {
        let pool = &members[community(n)];
        if pool.len() < 2 {
            return (n + 1) % spec.num_nodes;
        }
        loop {
            let m = *pool.choose(rng).unwrap();
            if m != n {
                return m;
            }
        }
    };
    let mut friendships = Vec::new();
    for n in 0..spec.num_nodes {
        for _ in 0..spec.friends_per_node {
            friendships.push((n, pick_partner(&mut rng, n)));
        }
    }

    let mut b = GraphBuilder::new(spec.num_nodes, spec.num_snapshots, spec.node_dim, spec.edge_dim);
    for k in 0..spec.num_events {
        let snapshot = 1 + k * spec.num_snapshots / spec.num_events.max(1);
        let (mut i, mut j) = if rng.gen_bool(spec.repeat_prob) && !friendships.is_empty() {
            *friendships.choose(&mut rng).unwrap()
        } else {
            let i = rng.gen_range(0..spec.num_nodes);
            (i, pick_partner(&mut rng, i))
        };
        if rng.gen_bool(0.5) {
            std::mem::swap(&mut i, &mut j);
        }
        b.push(i, j, snapshot, snapshot as f64, &[])
            .expect("generated event is in range");
    }
    b.build()
}
