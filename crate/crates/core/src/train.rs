//! Mini-batch training: neighbor sampling, loss evaluation, Adam updates,
//! the EMA target update, the epoch-end prototype update and collapse
//! diagnostics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::graph::{random_unit, sample_neighbors, Graph};
use crate::loss::{gumbel_noise, total_loss, DsslHyper, LossBreakdown, PairBatch};
use crate::model::{Activation, Combine, GraphContext, ModelDims, ModelParams};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "non-finite loss at epoch {epoch}, step {step}: total {:?}, local {:?}, global {:?}, entropy {:?}",
        breakdown.total, breakdown.local, breakdown.global, breakdown.entropy
    )]
    NonFinite {
        epoch: usize,
        step: usize,
        breakdown: LossBreakdown,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Where the epoch-end prototype update takes its posteriors from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeUpdate {
    /// Node posteriors cached from the epoch's training steps.
    #[default]
    Cached,
    /// A fresh pass over every node and all of its neighbors.
    Full,
    /// Prototypes move only by gradient.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub output: usize,
    pub projector_hidden: usize,
    pub head_hidden: usize,
    pub combine: Combine,
    pub projector_activation: Activation,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Neighbors drawn with replacement per central node.
    pub neighbors: usize,
    /// Use every neighbor instead of sampling.
    pub full_neighborhood: bool,
    pub epochs: usize,
    pub tau: f64,
    pub hyper: DsslHyper,
    pub seed: u64,
    pub eval_every: usize,
    pub degenerate_reinit_threshold: f64,
    pub prototype_update: PrototypeUpdate,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            output: 32,
            projector_hidden: 32,
            head_hidden: 32,
            combine: Combine::Concat,
            projector_activation: Activation::Relu,
            learning_rate: 5e-3,
            weight_decay: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 256,
            neighbors: 5,
            full_neighborhood: false,
            epochs: 100,
            tau: 0.9,
            hyper: DsslHyper::default(),
            seed: 0,
            eval_every: 0,
            degenerate_reinit_threshold: 1e-8,
            prototype_update: PrototypeUpdate::Cached,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [
            ("hidden", self.hidden),
            ("output", self.output),
            ("projector_hidden", self.projector_hidden),
            ("head_hidden", self.head_hidden),
            ("batch_size", self.batch_size),
            ("neighbors", self.neighbors),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("degenerate_reinit_threshold", self.degenerate_reinit_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        self.hyper.validate().map_err(TrainError::Config)
    }

    pub fn dims(&self, input: usize) -> ModelDims {
        ModelDims {
            input,
            hidden: self.hidden,
            output: self.output,
            k: self.hyper.k,
            projector_hidden: self.projector_hidden,
            head_hidden: self.head_hidden,
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(shapes: &[&Tensor], lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            t: 0,
        }
    }

    /// Updates `params[i]` with `grads[i]`; weight decay applies where
    /// `decay[i]` is set.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[&Tensor], decay: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.into_iter().enumerate() {
            let wd = if decay[i] { self.weight_decay } else { 0.0 };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (x, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = g + wd * *x;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                *x -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_local: f64,
    pub loss_global: f64,
    pub entropy: f64,
    pub mean_pairwise_cosine: f64,
    pub effective_clusters: Option<f64>,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

/// Representation-collapse diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseMetrics {
    pub mean_pairwise_cosine: f64,
    pub dim_std: Vec<f64>,
    pub effective_clusters: Option<f64>,
}

/// Mean cosine similarity over all ordered pairs `i ≠ j`, computed as
/// `(‖Σ_i v̂_i‖² − N)/(N(N−1))`.
pub fn mean_pairwise_cosine(reps: &Tensor) -> f64 {
    let n = reps.rows();
    assert!(n >= 2, "pairwise cosine needs two rows");
    let unit = reps.l2_normalize_rows(1e-12).expect("representations are a matrix");
    let mut total = vec![0.0; unit.cols()];
    let mut self_sim = 0.0;
    for i in 0..n {
        let row = unit.row(i);
        self_sim += row.iter().map(|x| x * x).sum::<f64>();
        for (t, x) in total.iter_mut().zip(row) {
            *t += x;
        }
    }
    let sq: f64 = total.iter().map(|x| x * x).sum();
    (sq - self_sim) / (n * (n - 1)) as f64
}

/// `exp` of the entropy of the assignment histogram: 1 when every node
/// shares one cluster, `K` for a uniform spread.
pub fn effective_cluster_count(assignments: &[usize]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for &a in assignments {
        *counts.entry(a).or_insert(0usize) += 1;
    }
    let n = assignments.len() as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

pub fn collapse_metrics(reps: &Tensor, posteriors: Option<&Tensor>) -> CollapseMetrics {
    let (n, d) = (reps.rows(), reps.cols());
    let mut dim_std = vec![0.0; d];
    for (j, s) in dim_std.iter_mut().enumerate() {
        let mean = (0..n).map(|i| reps.get(i, j)).sum::<f64>() / n as f64;
        *s = ((0..n).map(|i| (reps.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    }
    CollapseMetrics {
        mean_pairwise_cosine: mean_pairwise_cosine(reps),
        dim_std,
        effective_clusters: posteriors.map(|q| effective_cluster_count(&q.argmax_rows())),
    }
}

/// `μ_k = S_k/‖S_k‖` for the rows of `sums`; rows with norm below
/// `threshold` (or exactly zero) become random unit vectors.
pub fn prototype_update_from_sums<R: Rng + ?Sized>(sums: &Tensor, threshold: f64, rng: &mut R) -> Tensor {
    let (k, d) = (sums.rows(), sums.cols());
    let mut out = Vec::with_capacity(k * d);
    for r in 0..k {
        let row = sums.row(r);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < threshold || norm == 0.0 {
            out.extend(random_unit(d, rng));
        } else {
            out.extend(row.iter().map(|x| x / norm));
        }
    }
    Tensor::from_parts(vec![k, d], out)
}

/// `S = πᵀV`: the `K×D′` posterior-weighted sums of representations.
pub fn weighted_sums(posteriors: &Tensor, reps: &Tensor) -> Result<Tensor> {
    Ok(posteriors.matmul_tn(reps)?)
}

/// Everything that changes during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: Adam,
    pub epoch: usize,
    pub step: usize,
    pub rng: ChaCha8Rng,
    /// `K×D′` running `Σ_i π_i(k)·v_i`.
    pub pi_sums: Tensor,
    /// Running `Σ_i π_i(k)`.
    pub pi_mass: Vec<f64>,
    /// Latest node posterior per node, `N×K`.
    pub node_posteriors: Tensor,
}

impl TrainState {
    pub fn new(config: &TrainConfig, num_nodes: usize, input_dim: usize) -> Self {
        let dims = config.dims(input_dim);
        let params = ModelParams::init(dims, config.combine, config.projector_activation, config.seed);
        let adam = Adam::new(
            &params.trainable(),
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
            config.weight_decay,
        );
        Self {
            adam,
            epoch: 0,
            step: 0,
            // separate stream from the parameter initialization
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3d_1e00_0001),
            pi_sums: Tensor::zeros(&[dims.k, dims.output]),
            pi_mass: vec![0.0; dims.k],
            node_posteriors: Tensor::full(&[num_nodes, dims.k], 1.0 / dims.k as f64),
            params,
        }
    }

    fn reset_accumulators(&mut self) {
        self.pi_sums = Tensor::zeros(self.pi_sums.shape());
        self.pi_mass.iter_mut().for_each(|m| *m = 0.0);
    }
}

fn neighbor_lists<R: Rng + ?Sized>(g: &Graph, centers: &[usize], config: &TrainConfig, rng: &mut R) -> Vec<Vec<usize>> {
    centers
        .iter()
        .map(|&i| {
            if config.full_neighborhood {
                let n = g.neighbors(i);
                if n.is_empty() {
                    vec![i]
                } else {
                    n.to_vec()
                }
            } else {
                sample_neighbors(g, i, config.neighbors, rng)
            }
        })
        .collect()
}

/// One gradient step on the central nodes `centers`, followed by the EMA
/// target update.
pub fn train_step(
    state: &mut TrainState,
    graph: &Graph,
    ctx: &GraphContext,
    config: &TrainConfig,
    centers: &[usize],
) -> Result<LossBreakdown> {
    let samples = neighbor_lists(graph, centers, config, &mut state.rng);
    let batch = PairBatch::new(centers.to_vec(), &samples)?;
    let z_all = state.params.target.encode(ctx)?;
    let z_pairs = z_all.gather_rows(batch.neighbors())?;
    let noise = gumbel_noise(batch.num_pairs(), config.hyper.k, &mut state.rng);

    let tape = Tape::new();
    let model = state.params.bind(&tape);
    let v = model.encoder.encode(ctx, Some(centers))?;
    let out = total_loss(&model, v, tape.constant(z_pairs), &batch, &config.hyper, Some(&noise))?;
    if !out.breakdown.is_finite() {
        return Err(TrainError::NonFinite {
            epoch: state.epoch,
            step: state.step,
            breakdown: out.breakdown,
        });
    }
    let grads = tape.backward(out.total)?;
    let vars = model.vars();
    let grad_refs: Vec<&Tensor> = vars.iter().map(|&x| grads.wrt(x)).collect();
    if grad_refs.iter().any(|g| !g.all_finite()) {
        return Err(TrainError::NonFinite {
            epoch: state.epoch,
            step: state.step,
            breakdown: out.breakdown,
        });
    }
    let mut decay = vec![true; vars.len()];
    *decay.last_mut().expect("prototypes are trainable") = false;
    state.adam.step(state.params.trainable_mut(), &grad_refs, &decay);
    state.params.renormalize_prototypes();
    let online = state.params.online.clone();
    state.params.target.ema_from(&online, config.tau);

    let v_val = v.value();
    let sums = weighted_sums(&out.q_node, &v_val)?;
    state.pi_sums.add_assign(&sums);
    let k = config.hyper.k;
    for (r, &node) in centers.iter().enumerate() {
        let row = out.q_node.row(r);
        for (m, &p) in state.pi_mass.iter_mut().zip(row) {
            *m += p;
        }
        state.node_posteriors.row_mut(node).copy_from_slice(&row[..k]);
    }
    state.step += 1;
    Ok(out.breakdown)
}

/// Node posteriors `π_i` from every node and all of its neighbors under the
/// current parameters.
pub fn full_node_posteriors(params: &ModelParams, graph: &Graph, ctx: &GraphContext) -> Result<(Tensor, Tensor)> {
    let n = graph.num_nodes();
    let samples: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let nb = graph.neighbors(i);
            if nb.is_empty() {
                vec![i]
            } else {
                nb.to_vec()
            }
        })
        .collect();
    let batch = PairBatch::new((0..n).collect(), &samples)?;
    let v = params.online.encode(ctx)?;
    let z = params.target.encode(ctx)?;
    let v_pairs = v.gather_rows(batch.pair_center())?;
    let z_pairs = z.gather_rows(batch.neighbors())?;
    let q_edge = params.inference_logits(&v_pairs, &z_pairs)?.softmax_rows()?;
    let q_node = batch.aggregation().matmul_dense(&q_edge)?;
    Ok((v, q_node))
}

/// Epoch-end prototype replacement; resets the accumulators.
pub fn global_prototype_update(
    state: &mut TrainState,
    graph: &Graph,
    ctx: &GraphContext,
    config: &TrainConfig,
) -> Result<()> {
    let sums = match config.prototype_update {
        PrototypeUpdate::Off => None,
        PrototypeUpdate::Cached => Some(state.pi_sums.clone()),
        PrototypeUpdate::Full => {
            let (v, q) = full_node_posteriors(&state.params, graph, ctx)?;
            state.node_posteriors = q.clone();
            Some(weighted_sums(&q, &v)?)
        }
    };
    if let Some(sums) = sums {
        state.params.prototypes = prototype_update_from_sums(&sums, config.degenerate_reinit_threshold, &mut state.rng);
    }
    state.reset_accumulators();
    Ok(())
}

/// Shuffled mini-batches covering every node once.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Runs one epoch and returns its log record (without validation accuracy).
pub fn train_epoch(state: &mut TrainState, graph: &Graph, ctx: &GraphContext, config: &TrainConfig) -> Result<EpochLog> {
    let start = Instant::now();
    let batches = epoch_batches(graph.num_nodes(), config.batch_size, &mut state.rng);
    let mut acc = LossBreakdown::default();
    for centers in &batches {
        let b = train_step(state, graph, ctx, config, centers)?;
        acc.total += b.total;
        acc.local += b.local;
        acc.global += b.global;
        acc.entropy += b.entropy;
    }
    global_prototype_update(state, graph, ctx, config)?;
    let reps = state.params.online.encode(ctx)?;
    let metrics = if reps.rows() >= 2 {
        Some(collapse_metrics(&reps, Some(&state.node_posteriors)))
    } else {
        None
    };
    let steps = batches.len() as f64;
    let record = EpochLog {
        epoch: state.epoch,
        loss_total: acc.total / steps,
        loss_local: acc.local / steps,
        loss_global: acc.global / steps,
        entropy: acc.entropy / steps,
        mean_pairwise_cosine: metrics.as_ref().map_or(1.0, |m| m.mean_pairwise_cosine),
        effective_clusters: metrics.and_then(|m| m.effective_clusters),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        val_accuracy: None,
    };
    state.epoch += 1;
    Ok(record)
}

pub fn train(graph: &Graph, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(graph, config, |_, _| None)
}

/// Like [`train`], calling `on_epoch(epoch, params)` every
/// `config.eval_every` epochs; a returned accuracy goes into the log.
pub fn train_with(
    graph: &Graph,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ModelParams) -> Option<f64>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let ctx = GraphContext::new(graph)?;
    let mut state = TrainState::new(config, graph.num_nodes(), graph.feature_dim());
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut record = train_epoch(&mut state, graph, &ctx, config)?;
        if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 {
            record.val_accuracy = on_epoch(epoch, &state.params);
        }
        log.push(record);
    }
    Ok(TrainOutcome {
        params: state.params,
        log,
    })
}
