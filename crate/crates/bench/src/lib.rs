//! Shared fixtures for the benchmarks.

use dssl_core::graph::{generate_synthetic, SyntheticSpec};
use dssl_core::Graph;

/// Synthetic graph of `nodes` nodes and mean degree `degree`.
pub fn bench_graph(nodes: usize, degree: f64) -> Graph {
    generate_synthetic(&SyntheticSpec {
        num_nodes: nodes,
        class_count: 5,
        feature_dim: 32,
        homophily: 0.5,
        mean_degree: degree,
        feature_signal: 1.0,
        seed: 0,
    })
    .expect("feasible benchmark graph")
}
