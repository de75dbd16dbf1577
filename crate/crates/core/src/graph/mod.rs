//! Graph storage, adjacency normalization and neighbor sampling.

mod io;
mod metrics;
mod synthetic;

pub use io::{load_graph, write_graph, GraphFiles};
pub use metrics::{
    class_average_homophily, cross_class_neighborhood_similarity, edge_homophily, ClassSimilarity,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub(crate) use synthetic::random_unit;

use std::path::PathBuf;

use rand::Rng;

use crate::tensor::{SparseMatrix, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("feature matrix has {rows} rows but the graph has {nodes} nodes")]
    FeatureRows { rows: usize, nodes: usize },
    #[error("label list has {rows} entries but the graph has {nodes} nodes")]
    LabelRows { rows: usize, nodes: usize },
    #[error("label {label} is not below the class count {classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("graph has no labels")]
    MissingLabels,
    #[error("graph has no labeled edges")]
    NoEdges,
    #[error("metric needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {0} has nodes but none of them has a labeled neighbor")]
    ZeroDegreeClass(usize),
    #[error("infeasible synthetic graph: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Immutable attributed graph.
///
/// Undirected graphs keep each edge once in `edges` (smaller endpoint first)
/// and in both directions in the neighbor lists. Self-loops and duplicate
/// edges are dropped on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    directed: bool,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor,
    labels: Option<Vec<Option<usize>>>,
    class_count: usize,
}

impl Graph {
    /// `labels[i] == None` marks node `i` unlabeled. The class count is one
    /// more than the largest label unless `class_count` overrides it.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
        labels: Option<Vec<Option<usize>>>,
        class_count: Option<usize>,
        directed: bool,
    ) -> Result<Self> {
        let (rows, _) = features.expect_matrix("graph features")?;
        if rows != num_nodes {
            return Err(GraphError::FeatureRows {
                rows,
                nodes: num_nodes,
            });
        }
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::NodeOutOfRange(u, v, num_nodes));
            }
            if u == v {
                continue;
            }
            canon.push(if directed { (u, v) } else { (u.min(v), u.max(v)) });
        }
        canon.sort_unstable();
        canon.dedup();

        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in &canon {
            degree[u] += 1;
            if !directed {
                degree[v] += 1;
            }
        }
        let mut offsets = vec![0; num_nodes + 1];
        for i in 0..num_nodes {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0; offsets[num_nodes]];
        for &(u, v) in &canon {
            neighbors[fill[u]] = v;
            fill[u] += 1;
            if !directed {
                neighbors[fill[v]] = u;
                fill[v] += 1;
            }
        }
        for i in 0..num_nodes {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }

        let observed = labels
            .as_ref()
            .and_then(|ls| ls.iter().flatten().max().map(|m| m + 1))
            .unwrap_or(0);
        let class_count = class_count.unwrap_or(observed);
        if observed > class_count {
            return Err(GraphError::LabelOutOfRange {
                label: observed - 1,
                classes: class_count,
            });
        }
        if let Some(ls) = &labels {
            if ls.len() != num_nodes {
                return Err(GraphError::LabelRows {
                    rows: ls.len(),
                    nodes: num_nodes,
                });
            }
        }

        Ok(Self {
            num_nodes,
            directed,
            edges: canon,
            offsets,
            neighbors,
            features,
            labels,
            class_count,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Stored edges: unique unordered pairs for undirected graphs, unique
    /// ordered pairs for directed ones.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Out-neighbors of `node`, sorted.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub(crate) fn require_labels(&self) -> Result<&[Option<usize>]> {
        self.labels().ok_or(GraphError::MissingLabels)
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        assert_eq!(perm.len(), self.num_nodes);
        let mut rows = vec![Vec::new(); self.num_nodes];
        for (old, &new) in perm.iter().enumerate() {
            rows[new] = self.features.row(old).to_vec();
        }
        let features = Tensor::from_rows(&rows)?;
        let labels = self.labels.as_ref().map(|ls| {
            let mut out = vec![None; ls.len()];
            for (old, &new) in perm.iter().enumerate() {
                out[new] = ls[old];
            }
            out
        });
        Self::new(
            self.num_nodes,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])),
            features,
            labels,
            Some(self.class_count),
            self.directed,
        )
    }
}

/// Symmetrically normalized adjacency with self-loops,
/// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` counts out-neighbors plus one.
pub fn normalized_adjacency(g: &Graph) -> SparseMatrix {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt()).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(g.neighbors.len() + n);
    let mut vals = Vec::with_capacity(g.neighbors.len() + n);
    offsets.push(0);
    for i in 0..n {
        let mut row: Vec<usize> = g.neighbors(i).to_vec();
        row.push(i);
        row.sort_unstable();
        for j in row {
            cols.push(j);
            vals.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        offsets.push(cols.len());
    }
    SparseMatrix::new(n, n, offsets, cols, vals).expect("adjacency indices are in range")
}

/// Draws `m` out-neighbors of `node` uniformly with replacement. A node
/// without neighbors is its own only sample.
pub fn sample_neighbors<R: Rng + ?Sized>(g: &Graph, node: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let nbrs = g.neighbors(node);
    if nbrs.is_empty() {
        return vec![node];
    }
    (0..m).map(|_| nbrs[rng.random_range(0..nbrs.len())]).collect()
}

#[cfg(test)]
pub(crate) fn toy_graph(n: usize, edges: &[(usize, usize)], labels: &[usize]) -> Graph {
    Graph::new(
        n,
        edges.iter().copied(),
        Tensor::zeros(&[n, 1]),
        Some(labels.iter().map(|&l| Some(l)).collect()),
        None,
        false,
    )
    .unwrap()
}
