//! Labeled random graphs with a controlled edge homophily.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub class_count: usize,
    pub feature_dim: usize,
    /// Target fraction of intra-class edges.
    pub homophily: f64,
    pub mean_degree: f64,
    /// Norm of each class mean; features are the class mean plus unit
    /// Gaussian noise.
    pub feature_signal: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 1000,
            class_count: 5,
            feature_dim: 32,
            homophily: 0.5,
            mean_degree: 8.0,
            feature_signal: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GraphError::Infeasible(msg));
        if self.class_count < 2 {
            return bad(format!("class_count must be at least 2, got {}", self.class_count));
        }
        if self.num_nodes < self.class_count {
            return bad(format!(
                "{} nodes cannot fill {} classes",
                self.num_nodes, self.class_count
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return bad(format!("homophily {} outside [0, 1]", self.homophily));
        }
        if !(self.mean_degree >= 1.0 && self.mean_degree.is_finite()) {
            return bad(format!("mean_degree must be at least 1, got {}", self.mean_degree));
        }
        if !(self.feature_signal >= 0.0 && self.feature_signal.is_finite()) {
            return bad(format!("feature_signal must be non-negative, got {}", self.feature_signal));
        }
        Ok(())
    }
}

/// Generates a labeled undirected graph.
///
/// Labels are balanced (`i mod C`, shuffled). The graph has
/// `⌈N·mean_degree/2⌉` distinct edges of which exactly
/// `round(h·M)` join nodes of the same class. Intra-class edges pick a node
/// uniformly from classes with at least two members and a partner uniformly
/// from its class; cross-class edges pick the partner uniformly from the
/// other classes. Duplicates and self-loops are redrawn.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.num_nodes;
    let c = spec.class_count;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut members = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }

    let m = (n as f64 * spec.mean_degree / 2.0).ceil() as usize;
    let intra = (spec.homophily * m as f64).round() as usize;
    let cross = m - intra;

    let intra_capacity: usize = members.iter().map(|s| s.len() * (s.len() - 1) / 2).sum();
    let cross_capacity = n * (n - 1) / 2 - intra_capacity;
    if cross == 0 && members.iter().any(|s| s.len() < 2) {
        return Err(GraphError::Infeasible(
            "a fully homophilous graph needs every class to have at least two nodes".into(),
        ));
    }
    if intra > intra_capacity {
        return Err(GraphError::Infeasible(format!(
            "{intra} intra-class edges requested but only {intra_capacity} exist"
        )));
    }
    if cross > cross_capacity {
        return Err(GraphError::Infeasible(format!(
            "{cross} cross-class edges requested but only {cross_capacity} exist"
        )));
    }

    // nodes that can start an intra-class edge
    let pairable: Vec<usize> = (0..n).filter(|&i| members[labels[i]].len() >= 2).collect();
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    let budget = 200 * m + 10_000;
    let mut attempts = 0usize;
    let mut draw = |want: usize, same: bool, edges: &mut Vec<(usize, usize)>, rng: &mut ChaCha8Rng| {
        let mut made = 0;
        while made < want {
            attempts += 1;
            if attempts > budget {
                return Err(GraphError::Infeasible(
                    "edge sampling kept hitting duplicates; lower mean_degree".into(),
                ));
            }
            let (u, v) = if same {
                let u = pairable[rng.random_range(0..pairable.len())];
                let class = &members[labels[u]];
                (u, class[rng.random_range(0..class.len())])
            } else {
                let u = rng.random_range(0..n);
                let v = rng.random_range(0..n - members[labels[u]].len());
                (u, nth_outside_class(v, labels[u], &members))
            };
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                edges.push(key);
                made += 1;
            }
        }
        Ok(())
    };
    draw(intra, true, &mut edges, &mut rng)?;
    draw(cross, false, &mut edges, &mut rng)?;

    let d = spec.feature_dim;
    let means: Vec<Vec<f64>> = (0..c).map(|_| random_unit(d, &mut rng)).collect();
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        for &mu in &means[l] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(spec.feature_signal * mu + noise);
        }
    }
    let features = Tensor::new(vec![n, d], data)?;
    Graph::new(n, edges, features, Some(labels.into_iter().map(Some).collect()), Some(c), false)
}

/// The `idx`-th node (in class order) among classes other than `skip`.
fn nth_outside_class(mut idx: usize, skip: usize, members: &[Vec<usize>]) -> usize {
    for (k, class) in members.iter().enumerate() {
        if k == skip {
            continue;
        }
        if idx < class.len() {
            return class[idx];
        }
        idx -= class.len();
    }
    unreachable!("index beyond the other classes")
}

pub(crate) fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edge_homophily;

    fn spec(n: usize, c: usize, h: f64, degree: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_nodes: n,
            class_count: c,
            feature_dim: 4,
            homophily: h,
            mean_degree: degree,
            feature_signal: 1.0,
            seed,
        }
    }

    #[test]
    fn extremes_are_exact() {
        let g = generate_synthetic(&spec(100, 2, 1.0, 4.0, 1)).unwrap();
        assert_eq!(edge_homophily(&g).unwrap(), 1.0);
        let g = generate_synthetic(&spec(100, 2, 0.0, 4.0, 1)).unwrap();
        assert_eq!(edge_homophily(&g).unwrap(), 0.0);
    }

    #[test]
    fn mid_homophily_and_edge_count() {
        let g = generate_synthetic(&spec(2000, 5, 0.5, 12.0, 3)).unwrap();
        let h = edge_homophily(&g).unwrap();
        assert!((0.47..=0.53).contains(&h), "{h}");
        assert_eq!(g.num_edges(), 12_000);
    }

    #[test]
    fn sweep_stays_within_tolerance() {
        for step in 1..=9 {
            let target = step as f64 / 10.0;
            for seed in 0..5 {
                let g = generate_synthetic(&spec(500, 4, target, 6.0, seed)).unwrap();
                let h = edge_homophily(&g).unwrap();
                assert!((h - target).abs() <= 0.03, "target {target} seed {seed}: {h}");
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic(&spec(300, 3, 0.3, 5.0, 9)).unwrap();
        let b = generate_synthetic(&spec(300, 3, 0.3, 5.0, 9)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec(300, 3, 0.3, 5.0, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn singleton_class_cannot_be_fully_homophilous() {
        let err = generate_synthetic(&spec(3, 2, 1.0, 1.0, 0)).unwrap_err();
        assert!(matches!(err, GraphError::Infeasible(_)));
    }

    #[test]
    fn over_dense_request_is_infeasible() {
        assert!(generate_synthetic(&spec(10, 2, 1.0, 9.0, 0)).is_err());
        assert!(generate_synthetic(&spec(10, 2, 0.0, 1.0, 0)).is_ok());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_synthetic(&spec(10, 1, 0.5, 2.0, 0)).is_err());
        assert!(generate_synthetic(&spec(10, 2, 1.5, 2.0, 0)).is_err());
        assert!(generate_synthetic(&spec(10, 2, 0.5, 0.5, 0)).is_err());
    }

    #[test]
    fn features_follow_class_means() {
        let mut s = spec(2000, 2, 0.5, 2.0, 4);
        s.feature_signal = 5.0;
        s.feature_dim = 3;
        let g = generate_synthetic(&s).unwrap();
        let labels = g.labels().unwrap();
        let mut mean = vec![vec![0.0; 3]; 2];
        let mut count = [0.0; 2];
        for i in 0..g.num_nodes() {
            let k = labels[i].unwrap();
            count[k] += 1.0;
            for (m, x) in mean[k].iter_mut().zip(g.features().row(i)) {
                *m += x;
            }
        }
        for k in 0..2 {
            let norm = mean[k].iter().map(|m| (m / count[k]).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 5.0).abs() < 0.2, "class {k} mean norm {norm}");
        }
    }
}
