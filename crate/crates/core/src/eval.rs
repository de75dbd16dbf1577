//! Frozen-representation evaluation: stratified splits, a multinomial
//! logistic-regression probe, k-means and normalized mutual information.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{class_average_homophily, edge_homophily, Graph};
use crate::tensor::{dot, log_softmax_in_place, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid split fractions {0:?}: they must be positive and sum to 1")]
    Fractions([f64; 3]),
    #[error("no labeled nodes to evaluate")]
    NoLabels,
    #[error("training split contains a single class")]
    SingleClass,
    #[error("{0} rows of representations for {1} labels")]
    Rows(usize, usize),
    #[error("k-means needs 1 <= k <= n, got k={k} for n={n}")]
    ClusterCount { k: usize, n: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Stratification was requested but a class had fewer than three nodes.
    pub fell_back: bool,
}

fn cut(ids: &[usize], spec: &SplitSpec) -> (usize, usize) {
    let n = ids.len() as f64;
    let train = (spec.train * n).round() as usize;
    let val = ((spec.val * n).round() as usize).min(ids.len() - train.min(ids.len()));
    (train.min(ids.len()), val)
}

/// Splits the labeled nodes into disjoint train/validation/test sets.
pub fn split_nodes(labels: &[Option<usize>], spec: &SplitSpec) -> Result<Splits> {
    let fr = [spec.train, spec.val, spec.test];
    if fr.iter().any(|&f| !(f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EvalError::Fractions(fr));
    }
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    if labeled.is_empty() {
        return Err(EvalError::NoLabels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut fell_back = false;
    if spec.stratified {
        let c = labeled.iter().map(|&i| labels[i].unwrap_or(0)).max().unwrap_or(0) + 1;
        let mut by_class = vec![Vec::new(); c];
        for &i in &labeled {
            by_class[labels[i].expect("filtered to labeled")].push(i);
        }
        by_class.retain(|g| !g.is_empty());
        if by_class.iter().any(|g| g.len() < 3) {
            fell_back = true;
            groups.push(labeled);
        } else {
            groups = by_class;
        }
    } else {
        groups.push(labeled);
    }
    let mut out = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        fell_back,
    };
    for mut g in groups {
        g.shuffle(&mut rng);
        let (tr, va) = cut(&g, spec);
        out.train.extend_from_slice(&g[..tr]);
        out.val.extend_from_slice(&g[tr..tr + va]);
        out.test.extend_from_slice(&g[tr + va..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Regularization strengths tried by the probe.
pub const PROBE_L2_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

/// Multinomial logistic regression `softmax(xW + b)` trained on
/// `mean CE + λ/2·‖W‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

struct ProbeProblem<'a> {
    x: &'a Tensor,
    rows: &'a [usize],
    y: &'a [usize],
    classes: usize,
    l2: f64,
}

impl ProbeProblem<'_> {
    fn dim(&self) -> usize {
        (self.x.cols() + 1) * self.classes
    }

    /// Layout: `W` row-major `D×C`, then `b`.
    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (d, c) = (self.x.cols(), self.classes);
        let (w, b) = theta.split_at(d * c);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = self.rows.len() as f64;
        let mut loss = 0.0;
        let mut logits = vec![0.0; c];
        for (&r, &label) in self.rows.iter().zip(self.y) {
            let xr = self.x.row(r);
            logits.copy_from_slice(b);
            for (j, &xj) in xr.iter().enumerate() {
                for (l, &wv) in logits.iter_mut().zip(&w[j * c..(j + 1) * c]) {
                    *l += xj * wv;
                }
            }
            log_softmax_in_place(&mut logits);
            loss -= logits[label] / n;
            // softmax − one_hot, scaled by 1/n
            for (k, l) in logits.iter_mut().enumerate() {
                *l = (l.exp() - f64::from(u8::from(k == label))) / n;
            }
            let (gw, gb) = grad.split_at_mut(d * c);
            for (j, &xj) in xr.iter().enumerate() {
                for (g, &delta) in gw[j * c..(j + 1) * c].iter_mut().zip(&logits) {
                    *g += xj * delta;
                }
            }
            for (g, &delta) in gb.iter_mut().zip(&logits) {
                *g += delta;
            }
        }
        for (i, &wv) in w.iter().enumerate() {
            loss += 0.5 * self.l2 * wv * wv;
            grad[i] += self.l2 * wv;
        }
        loss
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Minimizes the probe objective with L-BFGS and a backtracking Armijo line
/// search until the gradient norm drops below `tol`.
fn lbfgs(problem: &ProbeProblem<'_>, tol: f64, max_iter: usize) -> (Vec<f64>, usize, f64) {
    const MEMORY: usize = 10;
    let n = problem.dim();
    let mut x = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut f = problem.value_grad(&x, &mut g);
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iter = 0;
    while iter < max_iter && norm(&g) > tol {
        iter += 1;
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let scale = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= scale);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - beta) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut t = if hist.is_empty() { 1.0 / norm(&g).max(1.0) } else { 1.0 };
        let mut f_new;
        let mut accepted = false;
        for _ in 0..60 {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + t * di);
            f_new = problem.value_grad(&x_new, &mut g_new);
            if f_new <= f + 1e-4 * t * slope {
                f = f_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
    }
    let gn = norm(&g);
    (x, iter, gn)
}

impl LogisticRegression {
    /// Fits on the rows `rows` of `x` with labels `y` (class ids below
    /// `classes`).
    pub fn fit(x: &Tensor, rows: &[usize], y: &[usize], classes: usize, l2: f64) -> Self {
        let problem = ProbeProblem { x, rows, y, classes, l2 };
        let (theta, iterations, grad_norm) = lbfgs(&problem, 1e-6, 5000);
        let d = x.cols();
        Self {
            weights: Tensor::from_parts(vec![d, classes], theta[..d * classes].to_vec()),
            bias: theta[d * classes..].to_vec(),
            iterations,
            grad_norm,
        }
    }

    pub fn predict(&self, x: &Tensor, rows: &[usize]) -> Vec<usize> {
        let c = self.bias.len();
        rows.iter()
            .map(|&r| {
                let mut logits = self.bias.clone();
                for (j, &xj) in x.row(r).iter().enumerate() {
                    for (l, &w) in logits.iter_mut().zip(self.weights.row(j)) {
                        *l += xj * w;
                    }
                }
                crate::tensor::argmax(&logits[..c])
            })
            .collect()
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub val_accuracy: f64,
    pub l2: f64,
}

/// Trains a probe per grid value on `splits.train`, keeps the best on
/// `splits.val` (ties favor the stronger penalty) and reports test accuracy.
pub fn linear_probe(reps: &Tensor, labels: &[Option<usize>], splits: &Splits) -> Result<ProbeResult> {
    if reps.rows() != labels.len() {
        return Err(EvalError::Rows(reps.rows(), labels.len()));
    }
    let y_of = |ids: &[usize]| -> Vec<usize> { ids.iter().map(|&i| labels[i].expect("split nodes are labeled")).collect() };
    let y_train = y_of(&splits.train);
    let y_val = y_of(&splits.val);
    let y_test = y_of(&splits.test);
    let classes = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    if y_train.iter().all(|&y| Some(&y) == y_train.first()) {
        return Err(EvalError::SingleClass);
    }
    let mut best: Option<(f64, f64, LogisticRegression)> = None;
    for &l2 in PROBE_L2_GRID.iter().rev() {
        let model = LogisticRegression::fit(reps, &splits.train, &y_train, classes, l2);
        let val = if splits.val.is_empty() {
            accuracy(&model.predict(reps, &splits.train), &y_train)
        } else {
            accuracy(&model.predict(reps, &splits.val), &y_val)
        };
        if best.as_ref().is_none_or(|(b, _, _)| val > *b) {
            best = Some((val, l2, model));
        }
    }
    let (val_accuracy, l2, model) = best.expect("grid is non-empty");
    Ok(ProbeResult {
        accuracy: accuracy(&model.predict(reps, &splits.test), &y_test),
        val_accuracy,
        l2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Tensor,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once<R: Rng + ?Sized>(x: &Tensor, k: usize, max_iter: usize, rng: &mut R) -> KMeansResult {
    let (n, d) = (x.rows(), x.cols());
    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(x.row(pick).to_vec());
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq_dist(x.row(i), centroids.last().expect("just pushed")));
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (best, dist) = centroids
                .iter()
                .enumerate()
                .map(|(c, cent)| (c, sq_dist(x.row(i), cent)))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
            inertia += dist;
        }
        trace.push(inertia);
        if !changed && trace.len() > 1 {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(x.row(a), &centroids[assign[a]]).total_cmp(&sq_dist(x.row(b), &centroids[assign[b]]))
                    })
                    .expect("n >= 1");
                centroids[c] = x.row(far).to_vec();
                counts[assign[far]] -= 1;
                for (s, v) in sums[assign[far]].iter_mut().zip(x.row(far)) {
                    *s -= v;
                }
                assign[far] = c;
                counts[c] = 1;
                sums[c] = x.row(far).to_vec();
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x.row(i), &centroids[assign[i]])).sum();
    KMeansResult {
        assignments: assign,
        centroids: Tensor::from_parts(vec![k, d], centroids.concat()),
        inertia,
        inertia_trace: trace,
    }
}

/// k-means++ seeding and Lloyd iterations (at most 300), best of 10
/// restarts by inertia with ties going to the earlier restart.
pub fn kmeans(x: &Tensor, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(EvalError::ClusterCount { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..10 {
        let run = kmeans_once(x, k, 300, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("ten restarts"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNormalization {
    #[default]
    Arithmetic,
    Geometric,
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> f64 {
    nmi_with(pred, truth, NmiNormalization::Arithmetic)
}

pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNormalization) -> f64 {
    assert_eq!(pred.len(), truth.len(), "partitions must cover the same items");
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 1.0;
    }
    let mut joint = std::collections::BTreeMap::new();
    let mut pa = std::collections::BTreeMap::new();
    let mut pb = std::collections::BTreeMap::new();
    for (&a, &b) in pred.iter().zip(truth) {
        *joint.entry((a, b)).or_insert(0.0) += 1.0;
        *pa.entry(a).or_insert(0.0) += 1.0;
        *pb.entry(b).or_insert(0.0) += 1.0;
    }
    let entropy = |m: &std::collections::BTreeMap<usize, f64>| -> f64 {
        m.values().map(|&c| -(c / n) * (c / n).ln()).sum()
    };
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (&(a, b), &c) in &joint {
        mi += (c / n) * (c * n / (pa[&a] * pb[&b])).ln();
    }
    let denom = match norm {
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
        NmiNormalization::Geometric => (ha * hb).sqrt(),
    };
    (mi / denom).clamp(0.0, 1.0)
}

/// SHA-256 over the little-endian bytes of the data, hex encoded.
pub fn tensor_checksum(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for x in t.data() {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Writes `node_id,dim_0,..` rows, one per node.
pub fn write_matrix_csv(path: &std::path::Path, t: &Tensor, prefix: &str) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..t.cols()).map(|j| format!("{prefix}_{j}")).collect();
    writeln!(w, "node_id,{}", header.join(","))?;
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{r},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a representation CSV (`node_id,dim_0,..`); rows may come in any
/// order but must cover `0..n` exactly once.
pub fn read_representations_csv(path: &std::path::Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)?;
    let file = path.display().to_string();
    let err = |line: usize, msg: String| EvalError::Parse { file: file.clone(), line, msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols = header.split(',').count();
    if cols < 2 || header.split(',').next().map(str::trim) != Some("node_id") {
        return Err(err(1, "header must be node_id,dim_0,...".into()));
    }
    let d = cols - 1;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in lines {
        let mut fields = line.split(',').map(str::trim);
        let id = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .ok_or_else(|| err(i + 1, "bad node_id".into()))?;
        let vals: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| err(i + 1, e.to_string()))?;
        if vals.len() != d {
            return Err(err(i + 1, format!("expected {d} values, found {}", vals.len())));
        }
        rows.push((id, vals));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(err(0, "node ids must be exactly 0..n".into()));
    }
    let n = rows.len();
    Ok(Tensor::from_parts(vec![n, d], rows.into_iter().flat_map(|r| r.1).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub nmi: f64,
    pub val_accuracy: f64,
    pub probe_l2: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub split_fell_back: bool,
    pub nmi_normalization: NmiNormalization,
    pub seed: u64,
    pub representation_checksum: String,
    pub edge_homophily: Option<f64>,
    pub class_average_homophily: Option<f64>,
}

/// Probe accuracy on `split`, and NMI of k-means (k = class count) against
/// the labels of every labeled node.
pub fn evaluate(reps: &Tensor, graph: &Graph, split: &SplitSpec, norm: NmiNormalization) -> Result<EvalReport> {
    if reps.rows() != graph.num_nodes() {
        return Err(EvalError::Rows(reps.rows(), graph.num_nodes()));
    }
    let labels = graph.labels().ok_or(EvalError::NoLabels)?;
    let splits = split_nodes(labels, split)?;
    let probe = linear_probe(reps, labels, &splits)?;
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let sub = reps.gather_rows(&labeled).expect("labeled ids are in range");
    let truth: Vec<usize> = labeled.iter().map(|&i| labels[i].expect("labeled")).collect();
    let classes = graph.class_count().clamp(1, labeled.len());
    let clusters = kmeans(&sub, classes, split.seed)?;
    Ok(EvalReport {
        accuracy: probe.accuracy,
        nmi: nmi_with(&clusters.assignments, &truth, norm),
        val_accuracy: probe.val_accuracy,
        probe_l2: probe.l2,
        train_size: splits.train.len(),
        val_size: splits.val.len(),
        test_size: splits.test.len(),
        split_fell_back: splits.fell_back,
        nmi_normalization: norm,
        seed: split.seed,
        representation_checksum: tensor_checksum(reps),
        edge_homophily: edge_homophily(graph).ok(),
        class_average_homophily: class_average_homophily(graph).ok(),
    })
}
