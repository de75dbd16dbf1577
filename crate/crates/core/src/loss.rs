//! The DSSL objective: posteriors, Gumbel-Softmax sampling, the local,
//! global and entropy terms, and the exact negative ELBO used as a test
//! oracle.
//!
//! A batch is a set of `B` central nodes, each paired with one or more
//! sampled neighbors, giving `P` (central, neighbor) pairs. Pair `p` of
//! central node `i` carries the weight `w_p = 1/(B·|N(i)|)`, so sums over
//! pairs average first over each node's neighbors and then over the batch.

use std::f64::consts::PI;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::model::{BoundMlp, BoundModel};
use crate::tensor::{argmax, Result, SparseMatrix, Tensor, TensorError};

/// How the latent factor enters the local term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalEstimator {
    /// Relaxed Gumbel-Softmax sample.
    Soft,
    /// One-hot forward value, relaxed gradient.
    #[default]
    StraightThrough,
    /// Exact expectation `Σ_k q_k ‖v + β g(e_k) − z‖²`.
    Exact,
}

/// Which per-edge distribution is aggregated into the node posterior used
/// by the global term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalEstimator {
    /// The head posterior itself (exact expectation over `k`).
    #[default]
    Exact,
    /// The Gumbel sample drawn for the local term.
    Gumbel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsslHyper {
    pub k: usize,
    pub beta: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub local_weight: f64,
    pub global_weight: f64,
    /// Replace the head posterior by `1/K` on every pair.
    pub uniform_posterior: bool,
    pub local_estimator: LocalEstimator,
    pub global_estimator: GlobalEstimator,
}

impl Default for DsslHyper {
    fn default() -> Self {
        Self {
            k: 8,
            beta: 1.0,
            sigma1_sq: 0.5,
            sigma2_sq: 1.0,
            gamma: 0.5,
            entropy_weight: 1.0,
            local_weight: 1.0,
            global_weight: 1.0,
            uniform_posterior: false,
            local_estimator: LocalEstimator::StraightThrough,
            global_estimator: GlobalEstimator::Exact,
        }
    }
}

impl DsslHyper {
    /// Returns the name of the first field that violates its constraint.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let positive = [
            ("sigma1_sq", self.sigma1_sq),
            ("sigma2_sq", self.sigma2_sq),
            ("gamma", self.gamma),
        ];
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let non_negative = [
            ("beta", self.beta),
            ("entropy_weight", self.entropy_weight),
            ("local_weight", self.local_weight),
            ("global_weight", self.global_weight),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        Ok(())
    }
}

/// Central nodes with their sampled neighbors, flattened into pairs.
#[derive(Debug, Clone)]
pub struct PairBatch {
    centers: Vec<usize>,
    pair_center: Vec<usize>,
    neighbors: Vec<usize>,
    /// `B×P`, row `i` averages the pairs of central node `i`.
    agg: Rc<SparseMatrix>,
    /// `P×1` pair weights.
    weights: Tensor,
}

impl PairBatch {
    /// `samples[i]` are the neighbors drawn for `centers[i]`; none may be
    /// empty.
    pub fn new(centers: Vec<usize>, samples: &[Vec<usize>]) -> Result<Self> {
        assert_eq!(centers.len(), samples.len(), "one neighbor list per central node");
        assert!(!centers.is_empty(), "empty batch");
        let b = centers.len() as f64;
        let mut pair_center = Vec::new();
        let mut neighbors = Vec::new();
        let mut trips = Vec::new();
        let mut weights = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            assert!(!s.is_empty(), "central node {} has no sampled neighbors", centers[i]);
            let share = 1.0 / s.len() as f64;
            for &j in s {
                trips.push((i, neighbors.len(), share));
                pair_center.push(i);
                neighbors.push(j);
                weights.push(share / b);
            }
        }
        let p = neighbors.len();
        let agg = SparseMatrix::from_triplets(centers.len(), p, &trips)?;
        Ok(Self {
            centers,
            pair_center,
            neighbors,
            agg: Rc::new(agg),
            weights: Tensor::from_parts(vec![p, 1], weights),
        })
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Index into [`PairBatch::centers`] for every pair.
    pub fn pair_center(&self) -> &[usize] {
        &self.pair_center
    }

    /// Neighbor node id for every pair.
    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn num_pairs(&self) -> usize {
        self.neighbors.len()
    }

    pub fn aggregation(&self) -> &Rc<SparseMatrix> {
        &self.agg
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
}

/// Per-batch loss components. `total` includes the configured weights; the
/// other fields are unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub local: f64,
    pub global: f64,
    pub entropy: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.local.is_finite() && self.global.is_finite() && self.entropy.is_finite()
    }
}

/// Row-wise softmax of head logits.
pub fn posterior_q(logits: &Tensor) -> Result<Tensor> {
    logits.softmax_rows()
}

/// `p(k|v) = softmax_k(v·μ_k/σ₁²)` for each row of `v` (uniform prior, unit
/// vectors).
pub fn posterior_p_k_given_v(v: &Tensor, mu: &Tensor, sigma1_sq: f64) -> Result<Tensor> {
    v.matmul_nt(mu)?.map(|x| x / sigma1_sq).softmax_rows()
}

/// I.i.d. Gumbel(0, 1) draws, `−ln(−ln u)` with `u` clamped away from 0 and 1.
pub fn gumbel_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

/// `softmax((logits + noise)/γ)`; with `hard` the forward value becomes the
/// one-hot argmax while gradients follow the relaxed sample.
pub fn gumbel_sample<'t>(logits: Var<'t>, gamma: f64, noise: &Tensor, hard: bool) -> Result<Var<'t>> {
    let tape = logits.tape();
    let soft = logits
        .add(tape.constant(noise.clone()))?
        .scale(1.0 / gamma)?
        .softmax_rows()?;
    if !hard {
        return Ok(soft);
    }
    let value = soft.value();
    let k = value.cols();
    let mut one_hot = Tensor::zeros(value.shape());
    for r in 0..value.rows() {
        let j = argmax(value.row(r));
        one_hot.data_mut()[r * k + j] = 1.0;
    }
    soft.with_forward(one_hot)
}

fn weighted_sum<'t>(per_pair: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    let w = per_pair.tape().constant(weights.clone());
    Ok(per_pair.mul(w)?.sum())
}

/// `Σ_p w_p ‖v_p + β·g(c_p) − z_p‖²`.
pub fn local_loss<'t>(
    v_pairs: Var<'t>,
    z_pairs: Var<'t>,
    c: Var<'t>,
    projector: &BoundMlp<'t>,
    beta: f64,
    weights: &Tensor,
) -> Result<Var<'t>> {
    let shift = projector.forward(c)?.scale(beta)?;
    let residual = v_pairs.add(shift)?.sub(z_pairs)?;
    weighted_sum(residual.squared_row_norms()?, weights)
}

/// `P×K` matrix of `‖v_p + β·g(e_k) − z_p‖²`.
pub fn pair_factor_distances<'t>(
    v_pairs: Var<'t>,
    z_pairs: Var<'t>,
    projector: &BoundMlp<'t>,
    beta: f64,
    k: usize,
) -> Result<Var<'t>> {
    let tape = v_pairs.tape();
    let g = projector.forward(tape.constant(Tensor::identity(k)))?.scale(beta)?;
    let d = v_pairs.sub(z_pairs)?;
    let ones_k = tape.constant(Tensor::full(&[1, k], 1.0));
    let d_sq = d.squared_row_norms()?.matmul(ones_k)?;
    let cross = d.matmul(g.transpose()?)?.scale(2.0)?;
    let g_sq = g.squared_row_norms()?.transpose()?;
    d_sq.add(cross)?.add(g_sq)
}

/// `Σ_p w_p Σ_k q_pk ‖v_p + β·g(e_k) − z_p‖²`.
pub fn local_loss_exact<'t>(
    v_pairs: Var<'t>,
    z_pairs: Var<'t>,
    q: Var<'t>,
    projector: &BoundMlp<'t>,
    beta: f64,
    weights: &Tensor,
) -> Result<Var<'t>> {
    let k = q.value().cols();
    let dist = pair_factor_distances(v_pairs, z_pairs, projector, beta, k)?;
    weighted_sum(q.mul(dist)?.row_sums()?, weights)
}

/// `−σ₂²·(1/B) Σ_i Σ_k q_node[i,k]·log softmax_k(v_i·μ̂_k/σ₁²)` where `μ̂` are
/// the row-normalized prototypes.
pub fn global_loss<'t>(q_node: Var<'t>, v: Var<'t>, mu: Var<'t>, sigma1_sq: f64, sigma2_sq: f64) -> Result<Var<'t>> {
    let b = v.value().rows() as f64;
    let mu_hat = mu.l2_normalize_rows()?;
    let log_p = v.matmul(mu_hat.transpose()?)?.scale(1.0 / sigma1_sq)?.log_softmax_rows()?;
    q_node.mul(log_p)?.sum().scale(-sigma2_sq / b)
}

/// `Σ_p w_p H(softmax(logits_p))` in nats.
pub fn entropy_term<'t>(logits: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    let q = logits.softmax_rows()?;
    let log_q = logits.log_softmax_rows()?;
    weighted_sum(q.mul(log_q)?.row_sums()?.neg()?, weights)
}

/// Result of [`total_loss`].
pub struct LossOutput<'t> {
    pub total: Var<'t>,
    pub breakdown: LossBreakdown,
    /// `P×K` head posterior (or the uniform replacement).
    pub q_edge: Rc<Tensor>,
    /// `B×K` aggregated posterior that weighted the global term.
    pub q_node: Rc<Tensor>,
}

/// `local + global − entropy`, each scaled by its weight.
///
/// `v` holds the `B` central representations (online encoder, on the tape)
/// and `z_pairs` the `P` neighbor representations (target encoder, constant).
/// `noise` is the `P×K` Gumbel noise; it is ignored when no sample is needed
/// and treated as zero when absent.
pub fn total_loss<'t>(
    model: &BoundModel<'t>,
    v: Var<'t>,
    z_pairs: Var<'t>,
    batch: &PairBatch,
    hyper: &DsslHyper,
    noise: Option<&Tensor>,
) -> Result<LossOutput<'t>> {
    let tape = v.tape();
    let k = hyper.k;
    let p = batch.num_pairs();
    let v_pairs = v.gather_rows(batch.pair_center())?;
    let (logits, q_edge, entropy) = if hyper.uniform_posterior {
        let logits = tape.constant(Tensor::zeros(&[p, k]));
        let q = tape.constant(Tensor::full(&[p, k], 1.0 / k as f64));
        (logits, q, entropy_term(logits, batch.weights())?)
    } else {
        let logits = model.inference_logits(v_pairs, z_pairs)?;
        if logits.value().cols() != k {
            return Err(TensorError::ShapeMismatch {
                op: "total_loss head output",
                lhs: logits.shape(),
                rhs: vec![p, k],
            });
        }
        (logits, logits.softmax_rows()?, entropy_term(logits, batch.weights())?)
    };

    let zeros;
    let noise = match noise {
        Some(n) => n,
        None => {
            zeros = Tensor::zeros(&[p, k]);
            &zeros
        }
    };
    let sample = match hyper.local_estimator {
        LocalEstimator::Exact if hyper.global_estimator == GlobalEstimator::Exact => None,
        LocalEstimator::Soft => Some(gumbel_sample(logits, hyper.gamma, noise, false)?),
        _ => Some(gumbel_sample(logits, hyper.gamma, noise, true)?),
    };
    let local = match (hyper.local_estimator, sample) {
        (LocalEstimator::Exact, _) | (_, None) => {
            local_loss_exact(v_pairs, z_pairs, q_edge, &model.projector, hyper.beta, batch.weights())?
        }
        (_, Some(c)) => local_loss(v_pairs, z_pairs, c, &model.projector, hyper.beta, batch.weights())?,
    };
    let q_src = match (hyper.global_estimator, sample) {
        (GlobalEstimator::Gumbel, Some(c)) => c,
        _ => q_edge,
    };
    let q_node = q_src.sparse_lmul(batch.aggregation())?;
    let global = global_loss(q_node, v, model.prototypes, hyper.sigma1_sq, hyper.sigma2_sq)?;

    let total = local
        .scale(hyper.local_weight)?
        .add(global.scale(hyper.global_weight)?)?
        .sub(entropy.scale(hyper.entropy_weight)?)?;
    Ok(LossOutput {
        breakdown: LossBreakdown {
            total: total.item(),
            local: local.item(),
            global: global.item(),
            entropy: entropy.item(),
        },
        total,
        q_edge: q_edge.value(),
        q_node: q_node.value(),
    })
}

/// Negative ELBO with full Gaussian log-densities and exact sums over `k`:
///
/// `Σ_p w_p Σ_k q_pk [−log N(z_p; v_p + β g(e_k), σ₂² I) − log p(k|v_p) + log q_pk]`
///
/// with `p(k|v) ∝ N(v; μ̂_k, σ₁² I)` under a uniform prior. `q_override`
/// (`P×K`, strictly positive rows) replaces the head posterior.
pub fn exact_negative_elbo<'t>(
    model: &BoundModel<'t>,
    v: Var<'t>,
    z_pairs: Var<'t>,
    batch: &PairBatch,
    hyper: &DsslHyper,
    q_override: Option<&Tensor>,
) -> Result<Var<'t>> {
    let tape = v.tape();
    let k = hyper.k;
    let v_pairs = v.gather_rows(batch.pair_center())?;
    let (q, log_q) = match q_override {
        Some(q) => {
            let q = tape.constant(q.clone());
            (q, q.log()?)
        }
        None if hyper.uniform_posterior => {
            let p = batch.num_pairs();
            let q = tape.constant(Tensor::full(&[p, k], 1.0 / k as f64));
            (q, q.log()?)
        }
        None => {
            let logits = model.inference_logits(v_pairs, z_pairs)?;
            (logits.softmax_rows()?, logits.log_softmax_rows()?)
        }
    };

    let d = v.value().cols() as f64;
    let dist = pair_factor_distances(v_pairs, z_pairs, &model.projector, hyper.beta, k)?;
    let neg_log_lik = dist
        .scale(1.0 / (2.0 * hyper.sigma2_sq))?
        .add_scalar(0.5 * d * (2.0 * PI * hyper.sigma2_sq).ln())?;

    let mu_hat = model.prototypes.l2_normalize_rows()?;
    let b = v.value().rows();
    let ones_k = tape.constant(Tensor::full(&[1, k], 1.0));
    let v_sq = v.squared_row_norms()?.matmul(ones_k)?;
    let mu_sq = mu_hat.squared_row_norms()?.transpose()?;
    let sq_dist = v_sq
        .sub(v.matmul(mu_hat.transpose()?)?.scale(2.0)?)?
        .add(mu_sq)?;
    debug_assert_eq!(sq_dist.value().rows(), b);
    let log_prior = sq_dist.scale(-1.0 / (2.0 * hyper.sigma1_sq))?.log_softmax_rows()?;
    let log_prior_pairs = log_prior.gather_rows(batch.pair_center())?;

    let per_k = neg_log_lik.sub(log_prior_pairs)?.add(log_q)?;
    weighted_sum(q.mul(per_k)?.row_sums()?, batch.weights())
}

/// Convenience for callers without a tape: evaluates [`total_loss`] on
/// constants and returns the breakdown only.
pub fn evaluate_loss(
    params: &crate::model::ModelParams,
    v: &Tensor,
    z_pairs: &Tensor,
    batch: &PairBatch,
    hyper: &DsslHyper,
    noise: Option<&Tensor>,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let model = params.bind(&tape);
    let out = total_loss(&model, tape.constant(v.clone()), tape.constant(z_pairs.clone()), batch, hyper, noise)?;
    Ok(out.breakdown)
}
