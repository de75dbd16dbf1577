//! Label-based structure metrics: edge homophily, class-average homophily
//! and cross-class neighborhood similarity.

use serde::Serialize;

use super::{Graph, GraphError, Result};

/// Fraction of stored edges whose endpoints share a label. Edges touching an
/// unlabeled node are ignored.
pub fn edge_homophily(g: &Graph) -> Result<f64> {
    let labels = g.require_labels()?;
    let mut same = 0usize;
    let mut total = 0usize;
    for &(u, v) in g.edges() {
        if let (Some(a), Some(b)) = (labels[u], labels[v]) {
            total += 1;
            same += usize::from(a == b);
        }
    }
    if total == 0 {
        return Err(GraphError::NoEdges);
    }
    Ok(same as f64 / total as f64)
}

/// Class-average homophily
/// `ĥ = 1/(C−1) Σ_k [h_k − |C_k|/N]_+` with
/// `h_k = Σ_{u∈C_k} d_u^{(k)} / Σ_{u∈C_k} d_u`.
///
/// Only labeled nodes and labeled neighbors are counted. Classes with no
/// members contribute zero.
pub fn class_average_homophily(g: &Graph) -> Result<f64> {
    let labels = g.require_labels()?;
    let c = g.class_count();
    if c < 2 {
        return Err(GraphError::TooFewClasses(c));
    }
    let mut same = vec![0usize; c];
    let mut degree = vec![0usize; c];
    let mut size = vec![0usize; c];
    let mut labeled = 0usize;
    for u in 0..g.num_nodes() {
        let Some(k) = labels[u] else { continue };
        labeled += 1;
        size[k] += 1;
        for &v in g.neighbors(u) {
            if let Some(kv) = labels[v] {
                degree[k] += 1;
                same[k] += usize::from(kv == k);
            }
        }
    }
    let mut total = 0.0;
    for k in 0..c {
        if size[k] == 0 {
            continue;
        }
        if degree[k] == 0 {
            return Err(GraphError::ZeroDegreeClass(k));
        }
        let h_k = same[k] as f64 / degree[k] as f64;
        total += (h_k - size[k] as f64 / labeled as f64).max(0.0);
    }
    Ok(total / (c - 1) as f64)
}

/// `C×C` cross-class neighborhood similarity. `None` marks a class without
/// any node that has a labeled neighbor.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ClassSimilarity(pub Vec<Vec<Option<f64>>>);

impl ClassSimilarity {
    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.0[a][b]
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }
}

/// Mean cosine similarity between neighbor-label histograms of every node
/// pair drawn from classes `c` and `c'` (pairs with `i == j` included).
/// Nodes with no labeled neighbor are left out of the averages.
///
/// Because the mean of pairwise cosines equals the dot product of the mean
/// unit histograms, this runs in `O(N·C + |E|)`.
pub fn cross_class_neighborhood_similarity(g: &Graph) -> Result<ClassSimilarity> {
    let labels = g.require_labels()?;
    let c = g.class_count();
    let mut sums = vec![vec![0.0; c]; c];
    let mut counts = vec![0usize; c];
    let mut hist = vec![0.0; c];
    for u in 0..g.num_nodes() {
        let Some(k) = labels[u] else { continue };
        hist.iter_mut().for_each(|h| *h = 0.0);
        for &v in g.neighbors(u) {
            if let Some(kv) = labels[v] {
                hist[kv] += 1.0;
            }
        }
        let norm = hist.iter().map(|h| h * h).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        counts[k] += 1;
        for (s, h) in sums[k].iter_mut().zip(&hist) {
            *s += h / norm;
        }
    }
    let mut out = vec![vec![None; c]; c];
    for a in 0..c {
        for b in 0..c {
            if counts[a] == 0 || counts[b] == 0 {
                continue;
            }
            let dot: f64 = sums[a].iter().zip(&sums[b]).map(|(x, y)| x * y).sum();
            out[a][b] = Some(dot / (counts[a] * counts[b]) as f64);
        }
    }
    Ok(ClassSimilarity(out))
}
