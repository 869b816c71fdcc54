//! Seeded inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanwise_core::interactions::WeightedGraph;
use spanwise_core::{AttentionMatrix, HeadId, Label};

/// Bipartite graph of `left + right` nodes with edge density `p`.
pub fn bipartite(left: usize, right: usize, p: f64, seed: u64) -> WeightedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = WeightedGraph::new(left + right);
    for u in 0..left {
        for v in left..left + right {
            if rng.random_bool(p) {
                g.add_edge(u, v, rng.random_range(0.01..1.0));
            }
        }
    }
    g
}

/// Row-stochastic `n x n` attention matrix.
pub fn attention(n: usize, seed: u64) -> AttentionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let z: f64 = row.iter().sum();
            row.into_iter().map(|v| v / z).collect()
        })
        .collect();
    AttentionMatrix::new(HeadId::new(0, 0), weights).expect("rows are normalized")
}

/// Answer logits for `count` random instances.
pub fn logits(count: usize, seed: u64) -> Vec<spanwise_core::uncertainty::Logits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            Label::ALL
                .into_iter()
                .map(|l| (l, rng.random_range(-10.0..10.0)))
                .collect()
        })
        .collect()
}
