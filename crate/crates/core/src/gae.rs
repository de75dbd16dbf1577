//! Graph auto-encoder baseline: the DSSL encoder trained to reconstruct the
//! adjacency matrix from inner products of its representations.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{concat_cols, Tape, Var};
use crate::graph::Graph;
use crate::loss::LossBreakdown;
use crate::model::{Encoder, GraphContext};
use crate::tensor::{Result as TensorResult, Tensor};
use crate::train::{mean_pairwise_cosine, Adam, EpochLog, Result, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaeConfig {
    pub hidden: usize,
    pub output: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub negative_samples_per_edge: usize,
    pub seed: u64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            output: 32,
            learning_rate: 5e-3,
            weight_decay: 5e-4,
            epochs: 100,
            negative_samples_per_edge: 1,
            seed: 0,
        }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [
            ("hidden", self.hidden),
            ("output", self.output),
            ("negative_samples_per_edge", self.negative_samples_per_edge),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        Ok(())
    }
}

/// Mean binary cross-entropy of `σ(v_iᵀv_j)` over linked `positives` and
/// unlinked `negatives`.
pub fn gae_loss<'t>(reps: Var<'t>, positives: &[(usize, usize)], negatives: &[(usize, usize)]) -> TensorResult<Var<'t>> {
    let tape = reps.tape();
    let pairs: Vec<(usize, usize)> = positives.iter().chain(negatives).copied().collect();
    let m = pairs.len();
    if m == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let scores = reps.gather_rows(&src)?.mul(reps.gather_rows(&dst)?)?.row_sums()?;
    // log_softmax([s, 0]) = [log σ(s), log(1 − σ(s))]
    let logits = concat_cols(&[scores, tape.constant(Tensor::zeros(&[m, 1]))])?;
    let mask: Vec<f64> = (0..m)
        .flat_map(|r| if r < positives.len() { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    let mask = Tensor::from_parts(vec![m, 2], mask);
    Ok(logits.log_softmax_rows()?.mul(tape.constant(mask))?.sum().scale(-1.0 / m as f64)?)
}

/// Uniform node pairs that are neither self-pairs nor edges in either
/// direction, `count` of them.
pub fn sample_negatives<R: Rng + ?Sized>(graph: &Graph, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let n = graph.num_nodes();
    let mut out = Vec::with_capacity(count);
    let budget = 1000 * count.max(1) + 1000;
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > budget || n < 2 {
            return Err(TrainError::Config(format!(
                "could not sample {count} non-edges from a graph with {n} nodes and {} edges",
                graph.num_edges()
            )));
        }
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v && !graph.has_edge(u, v) && !graph.has_edge(v, u) {
            out.push((u, v));
        }
    }
    Ok(out)
}

pub struct GaeOutcome {
    pub encoder: Encoder,
    pub log: Vec<EpochLog>,
}

/// Full-batch training; every epoch is one Adam step on freshly sampled
/// negatives. Log rows put the reconstruction loss in `loss_total` and
/// `loss_local`.
pub fn train_gae(graph: &Graph, config: &GaeConfig) -> Result<GaeOutcome> {
    train_gae_with(graph, config, |_| {})
}

pub fn train_gae_with(graph: &Graph, config: &GaeConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<GaeOutcome> {
    config.validate()?;
    let ctx = GraphContext::new(graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = Encoder::glorot(graph.feature_dim(), config.hidden, config.output, &mut rng);
    let mut adam = Adam::new(&[&encoder.w1, &encoder.w2], config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay);
    let positives = graph.edges();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let negatives = sample_negatives(graph, positives.len() * config.negative_samples_per_edge, &mut rng)?;
        let tape = Tape::new();
        let bound = encoder.bind(&tape);
        let reps = bound.encode(&ctx, None)?;
        let loss = gae_loss(reps, positives, &negatives)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                step: epoch,
                breakdown: LossBreakdown {
                    total: value,
                    local: value,
                    global: 0.0,
                    entropy: 0.0,
                },
            });
        }
        let grads = tape.backward(loss)?;
        let [w1, w2] = bound.vars();
        adam.step(
            vec![&mut encoder.w1, &mut encoder.w2],
            &[grads.wrt(w1), grads.wrt(w2)],
            &[true, true],
        );
        let entry = EpochLog {
            epoch,
            loss_total: value,
            loss_local: value,
            loss_global: 0.0,
            entropy: 0.0,
            mean_pairwise_cosine: mean_pairwise_cosine(&reps.value()),
            effective_clusters: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            val_accuracy: None,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(GaeOutcome { encoder, log })
}
