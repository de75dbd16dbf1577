//! Acceptance suite. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the process exits nonzero if any criterion fails.
//!
//! Set `DSSL_CORA_DIR` to a directory with Cora in the plain-text graph
//! format (edges.txt, features.csv, labels.txt) to check the real-data
//! homophily values as well.

use std::path::PathBuf;
use std::rc::Rc;
use std::time::{Duration, Instant};

use dssl_core::autograd::{concat_cols, concat_rows, finite_diff_check, Tape, Var};
use dssl_core::eval::{evaluate, kmeans, linear_probe, nmi, split_nodes, NmiNormalization, SplitSpec, Splits};
use dssl_core::gae::{train_gae, GaeConfig};
use dssl_core::graph::{class_average_homophily, edge_homophily, generate_synthetic, load_graph, GraphFiles, SyntheticSpec};
use dssl_core::loss::{
    exact_negative_elbo, gumbel_noise, total_loss, DsslHyper, GlobalEstimator, LocalEstimator, PairBatch,
};
use dssl_core::model::{Activation, BoundModel, Combine, GraphContext, ModelDims, ModelParams};
use dssl_core::train::{
    collapse_metrics, prototype_update_from_sums, train, train_step, weighted_sums, TrainConfig,
    TrainState,
};
use dssl_core::{Graph, SparseMatrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    tensor(vec![rows, cols], (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    gaussian(rows, cols, rng).l2_normalize_rows(1e-12).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of reach of the
/// finite-difference step.
fn off_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    gaussian(rows, cols, rng).map(|x| if x.abs() < 0.05 { x.signum() * 0.05 + x } else { x })
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

// Criterion 1

const FD_TOL: f64 = 1e-5;
const FD_EPS: f64 = 1e-6;

/// Reduces an op's output to a scalar with a fixed random weighting so every
/// output coordinate contributes.
fn weigh<'t>(out: Var<'t>, seed: u64) -> dssl_core::tensor::Result<Var<'t>> {
    let shape = out.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let w = tensor(shape.clone(), (0..n).map(|_| rng.random_range(0.5..1.5)).collect());
    Ok(out.mul(out.tape().constant(w))?.sum())
}

fn six_node_graph(rng: &mut ChaCha8Rng) -> Graph {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (1, 4)];
    Graph::new(6, edges, gaussian(6, 4, rng), Some((0..6).map(|i| Some(i % 3)).collect()), None, false).unwrap()
}

fn replace<'t>(m: &mut BoundModel<'t>, index: usize, var: Var<'t>) {
    match index {
        0 => m.encoder.w1 = var,
        1 => m.encoder.w2 = var,
        2 => m.projector.w1 = var,
        3 => m.projector.b1 = var,
        4 => m.projector.w2 = var,
        5 => m.projector.b2 = var,
        6 => m.head.w1 = var,
        7 => m.head.b1 = var,
        8 => m.head.w2 = var,
        9 => m.head.b2 = var,
        10 => m.prototypes = var,
        _ => unreachable!(),
    }
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut check = |name: &str, err: dssl_core::tensor::Result<f64>| match err {
        Ok(e) => worst.push((name.to_string(), e)),
        Err(e) => worst.push((format!("{name} ({e})"), f64::INFINITY)),
    };

    let a = off_zero(4, 3, &mut rng);
    let b = gaussian(3, 5, &mut rng);
    let c = gaussian(4, 3, &mut rng);
    let row = gaussian(1, 3, &mut rng);
    let pos = a.map(|x| x.abs() + 0.1);
    let sparse = Rc::new(
        SparseMatrix::from_triplets(3, 4, &[(0, 0, 0.5), (0, 2, -1.0), (1, 1, 2.0), (2, 3, 0.3), (2, 0, 1.5)]).unwrap(),
    );
    macro_rules! op {
        ($name:expr, $x:expr, |$t:ident, $v:ident| $body:expr) => {
            check($name, finite_diff_check(|$t: &Tape, $v: Var| weigh($body, 1), $x, FD_EPS))
        };
    }
    op!("matmul (left)", &a, |t, v| v.matmul(t.constant(b.clone()))?);
    op!("matmul (right)", &b, |t, v| t.constant(a.clone()).matmul(v)?);
    op!("sparse_lmul", &a, |_t, v| v.sparse_lmul(&sparse)?);
    op!("add", &a, |t, v| v.add(t.constant(c.clone()))?);
    op!("add (row broadcast)", &row, |t, v| t.constant(a.clone()).add(v)?);
    op!("sub", &a, |t, v| t.constant(c.clone()).sub(v)?);
    op!("mul", &a, |t, v| v.mul(t.constant(c.clone()))?);
    op!("mul (self)", &a, |_t, v| v.mul(v)?);
    op!("scale", &a, |_t, v| v.scale(-2.5)?);
    op!("add_scalar", &a, |_t, v| v.add_scalar(0.7)?.mul(v)?);
    op!("neg", &a, |_t, v| v.neg()?);
    op!("relu", &a, |_t, v| v.relu()?);
    op!("softmax_rows", &a, |_t, v| v.softmax_rows()?);
    op!("log_softmax_rows", &a, |_t, v| v.log_softmax_rows()?);
    op!("log", &pos, |_t, v| v.log()?);
    op!("exp", &a, |_t, v| v.exp()?);
    op!("sum", &a, |_t, v| v.mul(v)?.sum());
    op!("mean", &a, |_t, v| v.mul(v)?.mean()?);
    op!("l2_normalize_rows", &a, |_t, v| v.l2_normalize_rows()?);
    op!("squared_row_norms", &a, |_t, v| v.squared_row_norms()?);
    op!("row_sums", &a, |_t, v| v.row_sums()?);
    op!("gather_rows", &a, |_t, v| v.gather_rows(&[3, 0, 0, 2])?);
    op!("transpose", &a, |_t, v| v.transpose()?);
    op!("concat_rows", &a, |t, v| concat_rows(&[v, t.constant(c.clone()), v])?);
    op!("concat_cols", &a, |t, v| concat_cols(&[t.constant(c.clone()), v])?);

    // Full objective on a 6-node, K=3 instance, through the encoder.
    let g = six_node_graph(&mut rng);
    let ctx = GraphContext::new(&g).unwrap();
    let dims = ModelDims {
        input: 4,
        hidden: 5,
        output: 3,
        k: 3,
        projector_hidden: 4,
        head_hidden: 4,
    };
    let mut params = ModelParams::init(dims, Combine::Concat, Activation::Relu, 5);
    for t in params.trainable_mut() {
        *t = t.map(|x| if x.abs() < 0.02 { x + 0.05 } else { x });
    }
    params.renormalize_prototypes();
    let centers: Vec<usize> = (0..6).collect();
    let samples: Vec<Vec<usize>> = centers.iter().map(|&i| g.neighbors(i).to_vec()).collect();
    let batch = PairBatch::new(centers.clone(), &samples).unwrap();
    let z_all = params.target.encode(&ctx).unwrap().map(|x| x * 0.9);
    let z_pairs = z_all.gather_rows(batch.neighbors()).unwrap();
    let noise = gumbel_noise(batch.num_pairs(), 3, &mut rng);
    let modes = [
        ("soft sample", LocalEstimator::Soft, GlobalEstimator::Gumbel),
        ("exact expectation", LocalEstimator::Exact, GlobalEstimator::Exact),
    ];
    let names = dssl_core::model::TRAINABLE_NAMES;
    for (mode, local, global) in modes {
        let hyper = DsslHyper {
            k: 3,
            beta: 0.8,
            local_estimator: local,
            global_estimator: global,
            ..Default::default()
        };
        for (index, tensor) in params.trainable().into_iter().enumerate() {
            let err = finite_diff_check(
                |t: &Tape, var: Var| {
                    let mut m = params.bind(t);
                    replace(&mut m, index, var);
                    let v = m.encoder.encode(&ctx, Some(&centers))?;
                    Ok(total_loss(&m, v, t.constant(z_pairs.clone()), &batch, &hyper, Some(&noise))?.total)
                },
                tensor,
                FD_EPS,
            );
            check(&format!("full loss ({mode}) wrt {}", names[index]), err);
        }
    }

    let (name, max) = worst
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let msg = format!("{} checks, max relative error {max:.2e} ({name})", worst.len());
    if max < FD_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// Criteria 2 and 3

struct Instance {
    params: ModelParams,
    hyper: DsslHyper,
    u: Tensor,
    z_pairs: Tensor,
    batch: PairBatch,
}

fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=5);
    let d = rng.random_range(2..=4);
    let b = rng.random_range(2..=4);
    let dims = ModelDims {
        input: 3,
        hidden: 3,
        output: d,
        k,
        projector_hidden: rng.random_range(2..=5),
        head_hidden: rng.random_range(2..=5),
    };
    let params = ModelParams::init(dims, Combine::Concat, Activation::Relu, seed + 1000);
    let samples: Vec<Vec<usize>> = (0..b)
        .map(|_| (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..10)).collect())
        .collect();
    let batch = PairBatch::new((0..b).collect(), &samples).unwrap();
    let hyper = DsslHyper {
        k,
        beta: rng.random_range(0.0..2.0),
        sigma1_sq: rng.random_range(0.2..2.0),
        sigma2_sq: rng.random_range(0.2..2.0),
        local_estimator: LocalEstimator::Exact,
        global_estimator: GlobalEstimator::Exact,
        ..Default::default()
    };
    Instance {
        params,
        hyper,
        u: gaussian(b, d, &mut rng),
        z_pairs: unit_rows(batch.num_pairs(), d, &mut rng),
        batch,
    }
}

/// Per-pair `log p(k|v_p) + log N(z_p; v_p + β g(e_k), σ₂² I)`, from dense
/// arithmetic independent of the loss code.
fn joint_log_density(inst: &Instance, v: &Tensor) -> Vec<Vec<f64>> {
    let (k, d) = (inst.hyper.k, v.cols());
    let g = inst.params.project_latent(&Tensor::identity(k)).unwrap();
    let mu = inst.params.prototypes.l2_normalize_rows(1e-12).unwrap();
    let (s1, s2, beta) = (inst.hyper.sigma1_sq, inst.hyper.sigma2_sq, inst.hyper.beta);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    (0..inst.batch.num_pairs())
        .map(|p| {
            let vi = v.row(inst.batch.pair_center()[p]);
            let zp = inst.z_pairs.row(p);
            let prior: Vec<f64> = (0..k).map(|j| -sq(vi, mu.row(j)) / (2.0 * s1)).collect();
            let norm = logsumexp(&prior);
            (0..k)
                .map(|j| {
                    let mean: Vec<f64> = vi.iter().zip(g.row(j)).map(|(a, b)| a + beta * b).collect();
                    let log_lik = -sq(zp, &mean) / (2.0 * s2) - 0.5 * d as f64 * (2.0 * std::f64::consts::PI * s2).ln();
                    prior[j] - norm + log_lik
                })
                .collect()
        })
        .collect()
}

fn neg_elbo(inst: &Instance, v: &Tensor, q: Option<&Tensor>) -> f64 {
    let tape = Tape::new();
    let m = inst.params.bind(&tape);
    exact_negative_elbo(&m, tape.constant(v.clone()), tape.constant(inst.z_pairs.clone()), &inst.batch, &inst.hyper, q)
        .unwrap()
        .item()
}

fn elbo_oracle() -> Outcome {
    let mut worst_gap: f64 = 0.0;
    let mut min_slack = f64::INFINITY;
    for seed in 0..50 {
        let inst = random_instance(seed);
        let v = inst.u.l2_normalize_rows(1e-12).unwrap();
        let joint = joint_log_density(&inst, &v);
        let w = inst.batch.weights().data();
        let neg_log_evidence: f64 = joint.iter().zip(w).map(|(row, w)| -w * logsumexp(row)).sum();
        let bound = neg_elbo(&inst, &v, None);
        min_slack = min_slack.min(bound - neg_log_evidence);
        let k = inst.hyper.k;
        let bayes: Vec<f64> = joint
            .iter()
            .flat_map(|row| {
                let z = logsumexp(row);
                row.iter().map(move |x| (x - z).exp())
            })
            .collect();
        let bayes = tensor(vec![joint.len(), k], bayes);
        let tight = neg_elbo(&inst, &v, Some(&bayes));
        worst_gap = worst_gap.max((tight - neg_log_evidence).abs());
    }
    let msg = format!("min(−ELBO − (−log p)) = {min_slack:.3e}, max gap at Bayes posterior {worst_gap:.2e}");
    if min_slack >= -1e-12 && worst_gap <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Gradients of every model tensor and of the pre-normalization
/// representations, in a fixed order.
fn all_gradients(inst: &Instance, f: impl for<'t> Fn(&BoundModel<'t>, Var<'t>, Var<'t>) -> Var<'t>) -> Vec<Tensor> {
    let tape = Tape::new();
    let m = inst.params.bind(&tape);
    let u = tape.leaf(inst.u.clone());
    let v = u.l2_normalize_rows().unwrap();
    let loss = f(&m, v, tape.constant(inst.z_pairs.clone()));
    let grads = tape.backward(loss).unwrap();
    let mut vars = m.projector.vars().to_vec();
    vars.extend(m.head.vars());
    vars.push(m.prototypes);
    vars.push(u);
    vars.iter().map(|x| grads.wrt(*x).clone()).collect()
}

fn loss_derivation_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let inst = random_instance(100 + seed);
        let s = inst.hyper.sigma2_sq;
        // The training objective equals 2σ₂²·(−ELBO) plus a constant when its
        // σ₂² is doubled and the entropy coefficient is 2σ₂².
        let mapped = DsslHyper {
            sigma2_sq: 2.0 * s,
            entropy_weight: 2.0 * s,
            local_weight: 1.0,
            global_weight: 1.0,
            ..inst.hyper.clone()
        };
        let elbo = all_gradients(&inst, |m, v, z| {
            exact_negative_elbo(m, v, z, &inst.batch, &inst.hyper, None).unwrap().scale(2.0 * s).unwrap()
        });
        let objective = all_gradients(&inst, |m, v, z| total_loss(m, v, z, &inst.batch, &mapped, None).unwrap().total);
        for (a, b) in elbo.iter().zip(&objective) {
            let scale = a.data().iter().chain(b.data()).fold(0.0f64, |m, x| m.max(x.abs()));
            if scale > 0.0 {
                worst = worst.max(a.max_abs_diff(b) / scale);
            }
        }
    }
    let msg = format!("max relative gradient difference {worst:.2e} over 20 instances");
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// Criterion 4

fn prototype_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut wins = 0;
    let mut closest: f64 = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(5..40);
        let d = rng.random_range(2..8);
        let k = rng.random_range(1..5);
        let v = unit_rows(n, d, &mut rng);
        let pi = tensor(vec![n, k], (0..n * k).map(|_| rng.random_range(0.0..1.0)).collect())
            .softmax_rows()
            .unwrap();
        let sums = weighted_sums(&pi, &v).unwrap();
        let mu = prototype_update_from_sums(&sums, 1e-12, &mut rng);
        // Σ_i π_i(k) v_iᵀμ = S_kᵀμ
        let objective = |row: usize, m: &[f64]| sums.row(row).iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
        let candidates = unit_rows(1000, d, &mut rng);
        let mut all = true;
        for j in 0..k {
            let best = objective(j, mu.row(j));
            let rival = (0..1000).map(|c| objective(j, candidates.row(c))).fold(f64::NEG_INFINITY, f64::max);
            closest = closest.min(best - rival);
            all &= best >= rival;
        }
        wins += all as usize;
    }
    let msg = format!("{wins}/100 trials, smallest margin over random {closest:.3e}");
    if wins == 100 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// Criterion 5

fn metric_reproduction() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    match std::env::var_os("DSSL_CORA_DIR") {
        Some(dir) => {
            let files = GraphFiles::in_dir(&PathBuf::from(dir));
            match load_graph(&files.edges, &files.features, Some(&files.labels), false) {
                Ok(g) => {
                    let eh = edge_homophily(&g).unwrap_or(f64::NAN);
                    let ch = class_average_homophily(&g).unwrap_or(f64::NAN);
                    ok &= (eh - 0.81).abs() <= 0.01 && (ch - 0.766).abs() <= 0.01;
                    notes.push(format!("Cora edge {eh:.4}, class-average {ch:.4}"));
                }
                Err(e) => {
                    ok = false;
                    notes.push(format!("Cora failed to load: {e}"));
                }
            }
        }
        None => notes.push("Cora not present".into()),
    }
    let mut worst: f64 = 0.0;
    for step in 1..=9 {
        let h = step as f64 / 10.0;
        for seed in 0..5 {
            let g = generate_synthetic(&SyntheticSpec {
                homophily: h,
                seed,
                ..Default::default()
            });
            match g.and_then(|g| edge_homophily(&g)) {
                Ok(m) => worst = worst.max((m - h).abs()),
                Err(e) => return Err(format!("generator failed at h={h}: {e}")),
            }
        }
    }
    ok &= worst <= 0.03;
    notes.push(format!("synthetic max |measured − target| = {worst:.4}"));
    if ok {
        Ok(notes.join("; "))
    } else {
        Err(notes.join("; "))
    }
}

// Criteria 6-8

const SEEDS: [u64; 3] = [0, 1, 2];

fn sweep_graph(h: f64, seed: u64) -> Graph {
    generate_synthetic(&SyntheticSpec {
        num_nodes: 2000,
        class_count: 5,
        feature_dim: 32,
        homophily: h,
        mean_degree: 12.0,
        feature_signal: 1.0,
        seed,
    })
    .unwrap()
}

fn base_config(seed: u64) -> TrainConfig {
    TrainConfig { seed, ..Default::default() }
}

fn probe_accuracy(reps: &Tensor, g: &Graph, seed: u64) -> f64 {
    evaluate(reps, g, &SplitSpec { seed, ..Default::default() }, NmiNormalization::Arithmetic)
        .unwrap()
        .accuracy
}

struct DsslRun {
    accuracy: f64,
    cosine: f64,
}

fn run_dssl(g: &Graph, config: &TrainConfig) -> DsslRun {
    let out = train(g, config).unwrap();
    let reps = out.params.online.encode(&GraphContext::new(g).unwrap()).unwrap();
    DsslRun {
        accuracy: probe_accuracy(&reps, g, config.seed),
        cosine: collapse_metrics(&reps, None).mean_pairwise_cosine,
    }
}

fn run_gae(g: &Graph, seed: u64) -> f64 {
    let out = train_gae(g, &GaeConfig { seed, ..Default::default() }).unwrap();
    let reps = out.encoder.encode(&GraphContext::new(g).unwrap()).unwrap();
    probe_accuracy(&reps, g, seed)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn homophily_ordering() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    for h in [0.0, 0.25, 1.0] {
        let mut dssl = Vec::new();
        let mut gae = Vec::new();
        for seed in SEEDS {
            let g = sweep_graph(h, seed);
            dssl.push(run_dssl(&g, &base_config(seed)).accuracy);
            gae.push(run_gae(&g, seed));
        }
        rows.push((h, mean(dssl), mean(gae)));
    }
    let elapsed = start.elapsed();
    let (d0, g0) = (rows[0].1, rows[0].2);
    let (d25, g25) = (rows[1].1, rows[1].2);
    let (d1, g1) = (rows[2].1, rows[2].2);
    let msg = format!(
        "DSSL/GAE h=0 {d0:.3}/{g0:.3}, h=0.25 {d25:.3}/{g25:.3}, h=1 {d1:.3}/{g1:.3}; {:.0}s",
        elapsed.as_secs_f64()
    );
    let signal_ok = d1 > 0.85;
    let pass = signal_ok
        && d0 - g0 >= 0.10
        && d25 - g25 >= 0.05
        && g1 >= d1 - 0.05
        && elapsed < Duration::from_secs(15 * 60);
    if pass {
        Ok(msg)
    } else {
        Err(msg)
    }
}

struct AblationRuns {
    full: Vec<DsslRun>,
    no_local: Vec<f64>,
    no_shift: Vec<f64>,
    tau_zero: Vec<DsslRun>,
}

fn ablation_runs() -> AblationRuns {
    let mut runs = AblationRuns {
        full: Vec::new(),
        no_local: Vec::new(),
        no_shift: Vec::new(),
        tau_zero: Vec::new(),
    };
    for seed in SEEDS {
        let g = sweep_graph(0.1, seed);
        let base = base_config(seed);
        runs.full.push(run_dssl(&g, &base));
        let mut c = base.clone();
        c.hyper.local_weight = 0.0;
        runs.no_local.push(run_dssl(&g, &c).accuracy);
        let mut c = base.clone();
        c.hyper.beta = 0.0;
        runs.no_shift.push(run_dssl(&g, &c).accuracy);
        runs.tau_zero.push(run_dssl(&g, &TrainConfig { tau: 0.0, ..base }));
    }
    runs
}

fn ablation_direction(runs: &AblationRuns) -> Outcome {
    let full = mean(runs.full.iter().map(|r| r.accuracy));
    let a1 = mean(runs.no_local.iter().copied());
    let a4 = mean(runs.no_shift.iter().copied());
    let msg = format!("full {full:.3}, without local term {a1:.3}, without semantic shift {a4:.3}");
    if full - a1 >= 0.15 && full > a4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tau_direction(runs: &AblationRuns) -> Outcome {
    let acc_slow = mean(runs.full.iter().map(|r| r.accuracy));
    let acc_copy = mean(runs.tau_zero.iter().map(|r| r.accuracy));
    let cos_slow = mean(runs.full.iter().map(|r| r.cosine));
    let cos_copy = mean(runs.tau_zero.iter().map(|r| r.cosine));
    let msg = format!(
        "accuracy τ=0.9 {acc_slow:.3} vs τ=0 {acc_copy:.3}; mean cosine τ=0.9 {cos_slow:.4} vs τ=0 {cos_copy:.4}"
    );
    if acc_slow >= acc_copy && cos_copy > cos_slow {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// Criterion 9

fn step_time(degree: f64) -> f64 {
    let g = generate_synthetic(&SyntheticSpec {
        num_nodes: 2000,
        class_count: 5,
        feature_dim: 16,
        homophily: 0.5,
        mean_degree: degree,
        feature_signal: 1.0,
        seed: 0,
    })
    .unwrap();
    let config = TrainConfig {
        full_neighborhood: true,
        batch_size: 2000,
        ..Default::default()
    };
    let ctx = GraphContext::new(&g).unwrap();
    let mut state = TrainState::new(&config, g.num_nodes(), g.feature_dim());
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    train_step(&mut state, &g, &ctx, &config, &all).unwrap();
    let mut times: Vec<f64> = (0..7)
        .map(|_| {
            let t = Instant::now();
            train_step(&mut state, &g, &ctx, &config, &all).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn scaling_smoke() -> Outcome {
    let (base, double) = (step_time(24.0), step_time(48.0));
    let ratio = double / base;
    let msg = format!("step {:.1} ms at |E|, {:.1} ms at 2|E|, ratio {ratio:.2}", base * 1e3, double * 1e3);
    if (1.3..=3.0).contains(&ratio) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// Criterion 10

fn evaluation_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let labels: Vec<usize> = (0..60).map(|i| i % 4).collect();
    let self_nmi = nmi(&labels, &labels);

    // Four classes separated along their own axis, with small noise.
    let n = 200;
    let y: Vec<Option<usize>> = (0..n).map(|i| Some(i % 4)).collect();
    let x = tensor(
        vec![n, 4],
        (0..n)
            .flat_map(|i| {
                let noise: [f64; 4] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
                (0..4).map(move |j| if j == i % 4 { 3.0 + noise[j] } else { noise[j] })
            })
            .collect(),
    );
    let splits: Splits = split_nodes(&y, &SplitSpec::default()).unwrap();
    let probe = linear_probe(&x, &y, &splits).unwrap().accuracy;

    // Two blobs ten standard deviations apart.
    let m = 100;
    let mut blob = gaussian(m, 2, &mut rng).into_data();
    for (i, v) in blob.iter_mut().enumerate() {
        if (i / 2) >= m / 2 && i % 2 == 0 {
            *v += 10.0;
        }
    }
    let truth: Vec<usize> = (0..m).map(|i| usize::from(i >= m / 2)).collect();
    let km = kmeans(&tensor(vec![m, 2], blob), 2, 0).unwrap();
    let recovered = nmi(&km.assignments, &truth);

    let msg = format!("NMI(y,y) = {self_nmi}, separable probe accuracy {probe}, blob recovery NMI {recovered}");
    if self_nmi == 1.0 && probe == 1.0 && recovered == 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let mut outcome = f();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                let text = match outcome {
                    Ok(s) | Err(s) => s,
                };
                outcome = Err(format!("{text}; took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()));
            }
        }
        match outcome {
            Ok(msg) => println!("PASS {id:>2} {name}: {msg} [{:.1}s]", elapsed.as_secs_f64()),
            Err(msg) => {
                failures += 1;
                println!("FAIL {id:>2} {name}: {msg} [{:.1}s]", elapsed.as_secs_f64())
            }
        }
    };
    report(1, "gradient suite", Some(Duration::from_secs(30)), &mut gradient_suite);
    report(2, "ELBO oracle", Some(Duration::from_secs(10)), &mut elbo_oracle);
    report(3, "loss-derivation oracle", None, &mut loss_derivation_oracle);
    report(4, "prototype optimality", None, &mut prototype_optimality);
    report(5, "metric reproduction", None, &mut metric_reproduction);
    report(6, "homophily-sweep ordering", Some(Duration::from_secs(15 * 60)), &mut homophily_ordering);
    let runs = ablation_runs();
    report(7, "ablation direction", None, &mut || ablation_direction(&runs));
    report(8, "target-decay direction", None, &mut || tau_direction(&runs));
    report(9, "scaling smoke test", None, &mut scaling_smoke);
    report(10, "evaluation correctness", None, &mut evaluation_correctness);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
