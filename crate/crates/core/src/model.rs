//! Trainable components: the two-layer graph-convolution encoder (online and
//! target copies), the latent projector, the inference head and the
//! prototype bank.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{concat_cols, Tape, Var, NORM_FLOOR};
use crate::graph::{normalized_adjacency, random_unit, Graph};
use crate::tensor::{Result, SparseMatrix, Tensor};

/// Layer sizes of every network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub k: usize,
    pub projector_hidden: usize,
    pub head_hidden: usize,
}

impl ModelDims {
    /// Perceptron hidden widths default to the representation size.
    pub fn new(input: usize, hidden: usize, output: usize, k: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            k,
            projector_hidden: output,
            head_hidden: output,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// How the inference head combines a central representation with a
/// neighbor representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Concat,
    Product,
}

fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

/// Perceptron with one hidden layer and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

impl Mlp {
    pub fn glorot<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            w1: glorot(input, hidden, rng),
            b1: Tensor::zeros(&[1, hidden]),
            w2: glorot(hidden, output, rng),
            b2: Tensor::zeros(&[1, output]),
            activation,
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        Self {
            w1: Tensor::zeros(&[input, hidden]),
            b1: Tensor::zeros(&[1, hidden]),
            w2: Tensor::zeros(&[hidden, output]),
            b2: Tensor::zeros(&[1, output]),
            activation,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let out = self.bind_constant(&tape).forward(tape.constant(x.clone()))?;
        Ok((*out.value()).clone())
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
            activation: self.activation,
        }
    }

    fn bind_constant<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            w1: tape.constant(self.w1.clone()),
            b1: tape.constant(self.b1.clone()),
            w2: tape.constant(self.w2.clone()),
            b2: tape.constant(self.b2.clone()),
            activation: self.activation,
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMlp<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    pub activation: Activation,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let h = x.matmul(self.w1)?.add(self.b1)?;
        let h = match self.activation {
            Activation::Relu => h.relu()?,
            Activation::Identity => h,
        };
        h.matmul(self.w2)?.add(self.b2)
    }

    pub fn vars(&self) -> [Var<'t>; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Propagation data shared by every encoder pass over one graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    adj: Rc<SparseMatrix>,
    /// `Â·X`, fixed for the lifetime of the graph.
    ax: Tensor,
}

impl GraphContext {
    pub fn new(g: &Graph) -> Result<Self> {
        let adj = normalized_adjacency(g);
        let ax = adj.matmul_dense(g.features())?;
        Ok(Self { adj: Rc::new(adj), ax })
    }

    pub fn adjacency(&self) -> &Rc<SparseMatrix> {
        &self.adj
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.ax.cols()
    }
}

/// Two-layer GCN without biases: `norm(Â·relu(Â·X·W1)·W2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub w1: Tensor,
    pub w2: Tensor,
}

impl Encoder {
    pub fn glorot<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w1: glorot(input, hidden, rng),
            w2: glorot(hidden, output, rng),
        }
    }

    /// Unit-norm representations of every node.
    pub fn encode(&self, ctx: &GraphContext) -> Result<Tensor> {
        let h = ctx.ax.matmul(&self.w1)?.map(|x| x.max(0.0));
        let out = ctx.adj.matmul_dense(&h.matmul(&self.w2)?)?;
        out.l2_normalize_rows(NORM_FLOOR)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundEncoder<'t> {
        BoundEncoder {
            w1: tape.leaf(self.w1.clone()),
            w2: tape.leaf(self.w2.clone()),
        }
    }

    /// Elementwise `self ← τ·self + (1−τ)·online`.
    pub fn ema_from(&mut self, online: &Encoder, tau: f64) {
        for (xi, theta) in [(&mut self.w1, &online.w1), (&mut self.w2, &online.w2)] {
            for (x, &t) in xi.data_mut().iter_mut().zip(theta.data()) {
                *x = tau * *x + (1.0 - tau) * t;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundEncoder<'t> {
    pub w1: Var<'t>,
    pub w2: Var<'t>,
}

impl<'t> BoundEncoder<'t> {
    /// Representations of `rows` (all nodes when `None`), in that order.
    pub fn encode(&self, ctx: &GraphContext, rows: Option<&[usize]>) -> Result<Var<'t>> {
        let tape = self.w1.tape();
        let h = tape.constant(ctx.ax.clone()).matmul(self.w1)?.relu()?.matmul(self.w2)?;
        let out = match rows {
            None => h.sparse_lmul(&ctx.adj)?,
            Some(rows) => h.sparse_lmul(&Rc::new(ctx.adj.select_rows(rows)?))?,
        };
        out.l2_normalize_rows()
    }

    pub fn vars(&self) -> [Var<'t>; 2] {
        [self.w1, self.w2]
    }
}

/// Every parameter of the model. Only `online`, `projector`, `head` and
/// `prototypes` are trained by gradient; `target` follows `online` by EMA.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub combine: Combine,
    pub online: Encoder,
    pub target: Encoder,
    pub projector: Mlp,
    pub head: Mlp,
    /// `K×D′`, unit rows.
    pub prototypes: Tensor,
}

/// Names of the trainable tensors in [`ModelParams::trainable`] order.
pub const TRAINABLE_NAMES: [&str; 11] = [
    "online.w1",
    "online.w2",
    "projector.w1",
    "projector.b1",
    "projector.w2",
    "projector.b2",
    "head.w1",
    "head.b1",
    "head.w2",
    "head.b2",
    "prototypes",
];

impl ModelParams {
    pub fn init(dims: ModelDims, combine: Combine, projector_activation: Activation, seed: u64) -> Self {
        assert!(
            dims.input >= 1 && dims.hidden >= 1 && dims.output >= 1 && dims.k >= 1,
            "model dimensions must be positive"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Encoder::glorot(dims.input, dims.hidden, dims.output, &mut rng);
        let projector = Mlp::glorot(dims.k, dims.projector_hidden, dims.output, projector_activation, &mut rng);
        let head_in = match combine {
            Combine::Concat => 2 * dims.output,
            Combine::Product => dims.output,
        };
        let head = Mlp::glorot(head_in, dims.head_hidden, dims.k, Activation::Relu, &mut rng);
        let mut mu = Vec::with_capacity(dims.k * dims.output);
        for _ in 0..dims.k {
            mu.extend(random_unit(dims.output, &mut rng));
        }
        Self {
            dims,
            combine,
            target: online.clone(),
            online,
            projector,
            head,
            prototypes: Tensor::from_parts(vec![dims.k, dims.output], mu),
        }
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.online.w1, &self.online.w2];
        out.extend(self.projector.tensors());
        out.extend(self.head.tensors());
        out.push(&self.prototypes);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.online.w1, &mut self.online.w2];
        out.extend(self.projector.tensors_mut());
        out.extend(self.head.tensors_mut());
        out.push(&mut self.prototypes);
        out
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundModel<'t> {
        BoundModel {
            encoder: self.online.bind(tape),
            projector: self.projector.bind(tape),
            head: self.head.bind(tape),
            prototypes: tape.leaf(self.prototypes.clone()),
            combine: self.combine,
        }
    }

    /// `g(c)` for each row of `c`.
    pub fn project_latent(&self, c: &Tensor) -> Result<Tensor> {
        self.projector.forward(c)
    }

    /// Head logits for row-aligned pairs of representations.
    pub fn inference_logits(&self, v: &Tensor, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let head = self.head.bind_constant(&tape);
        let out = head_logits(&head, self.combine, tape.constant(v.clone()), tape.constant(z.clone()))?;
        Ok((*out.value()).clone())
    }

    /// Rescales every prototype row whose norm drifted from one.
    pub fn renormalize_prototypes(&mut self) {
        let d = self.dims.output;
        for row in self.prototypes.data_mut().chunks_mut(d) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 && norm > NORM_FLOOR {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
}

fn head_logits<'t>(head: &BoundMlp<'t>, combine: Combine, v: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
    let input = match combine {
        Combine::Concat => concat_cols(&[v, z])?,
        Combine::Product => v.mul(z)?,
    };
    head.forward(input)
}

/// [`ModelParams`] bound to a tape as gradient leaves.
#[derive(Debug, Clone, Copy)]
pub struct BoundModel<'t> {
    pub encoder: BoundEncoder<'t>,
    pub projector: BoundMlp<'t>,
    pub head: BoundMlp<'t>,
    pub prototypes: Var<'t>,
    pub combine: Combine,
}

impl<'t> BoundModel<'t> {
    /// Leaves in [`ModelParams::trainable`] order.
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = self.encoder.vars().to_vec();
        out.extend(self.projector.vars());
        out.extend(self.head.vars());
        out.push(self.prototypes);
        out
    }

    pub fn inference_logits(&self, v: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        head_logits(&self.head, self.combine, v, z)
    }
}
