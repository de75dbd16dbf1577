//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s together with
//! the forward value. [`Tape::backward`] then walks the records in reverse
//! and returns the gradient of a scalar root with respect to every leaf that
//! was created with [`Tape::leaf`].
//!
//! ```
//! use dssl_core::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
//! let y = x.mul(x).unwrap().sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::{dot, Result, SparseMatrix, Tensor, TensorError};

/// Norm floor used by row normalization everywhere in the crate.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    SparseMatMul(Rc<SparseMatrix>, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScalarMul(usize, f64),
    AddScalar(usize),
    Relu(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Log(usize),
    Exp(usize),
    Sum(usize),
    Mean(usize),
    L2NormalizeRows(usize),
    SquaredRowNorms(usize),
    RowSums(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Rc<Vec<usize>>),
    Transpose(usize),
    /// Forward value comes from elsewhere; the incoming gradient is passed
    /// unchanged to the surrogate parent.
    PassThrough(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of operations. Parents always precede children, so
/// the record is acyclic by construction.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    checked: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape in checked mode rejects non-finite forward values and
    /// logarithms of non-positive entries.
    pub fn checked() -> Self {
        Self {
            nodes: RefCell::default(),
            checked: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable input; [`Tape::backward`] reports its gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op, parents: &[usize]) -> Result<Var<'_>> {
        if self.checked {
            if let Some((index, &v)) = value.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(TensorError::NonFinite { index, value: v });
            }
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        Ok(self.push(value, op, requires_grad))
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Gradient of the scalar `root` with respect to every leaf.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(self, root.tape), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(TensorError::Rank {
                op: "backward",
                expected: "scalar root",
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(root_value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let val = |i: usize| &*nodes[i].value;
            let mut send = |i: usize, contrib: Tensor| {
                if !nodes[i].requires_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        send(*a, g.matmul_nt(val(*b))?);
                    }
                    if nodes[*b].requires_grad {
                        send(*b, val(*a).matmul_tn(&g)?);
                    }
                }
                Op::SparseMatMul(s, d) => send(*d, s.transpose_matmul_dense(&g)?),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddRow(a, b) => {
                    let cols = g.cols();
                    let mut rowsum = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for (s, v) in rowsum.iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    send(*b, Tensor::from_parts(val(*b).shape().to_vec(), rowsum));
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(val(*b), |g, y| g * y));
                    send(*b, g.zip_map(val(*a), |g, x| g * x));
                }
                Op::ScalarMul(a, s) => send(*a, g.map(|v| v * s)),
                Op::AddScalar(a) | Op::PassThrough(a) => send(*a, g),
                Op::Relu(a) => send(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut out = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &mut out.data_mut()[r * c..(r + 1) * c];
                        let inner = dot(gr, yr);
                        for (gv, &yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - inner);
                        }
                    }
                    send(*a, out);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut out = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &mut out.data_mut()[r * c..(r + 1) * c];
                        let total: f64 = gr.iter().sum();
                        for (gv, &yv) in gr.iter_mut().zip(yr) {
                            *gv -= yv.exp() * total;
                        }
                    }
                    send(*a, out);
                }
                Op::Log(a) => send(*a, g.zip_map(val(*a), |g, x| g / x)),
                Op::Exp(a) => send(*a, g.zip_map(&node.value, |g, y| g * y)),
                Op::Sum(a) => {
                    let gv = g.item();
                    send(*a, Tensor::full(val(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    let gv = g.item() / x.len() as f64;
                    send(*a, Tensor::full(x.shape(), gv));
                }
                Op::L2NormalizeRows(a) => {
                    let x = val(*a);
                    let y = &node.value;
                    let c = x.cols();
                    let mut out = g.clone();
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        let norm = dot(xr, xr).sqrt();
                        let gr = &mut out.data_mut()[r * c..(r + 1) * c];
                        if norm > NORM_FLOOR {
                            let yr = y.row(r);
                            let proj = dot(gr, yr);
                            for (gv, &yv) in gr.iter_mut().zip(yr) {
                                *gv = (*gv - yv * proj) / norm;
                            }
                        } else {
                            gr.iter_mut().for_each(|gv| *gv /= NORM_FLOOR);
                        }
                    }
                    send(*a, out);
                }
                Op::SquaredRowNorms(a) => {
                    let x = val(*a);
                    let c = x.cols();
                    let mut out = x.clone();
                    for r in 0..x.rows() {
                        let s = 2.0 * g.data()[r];
                        out.data_mut()[r * c..(r + 1) * c]
                            .iter_mut()
                            .for_each(|v| *v *= s);
                    }
                    send(*a, out);
                }
                Op::RowSums(a) => {
                    let x = val(*a);
                    let c = x.cols();
                    let mut out = Tensor::zeros(x.shape());
                    for r in 0..x.rows() {
                        let s = g.data()[r];
                        out.data_mut()[r * c..(r + 1) * c].iter_mut().for_each(|v| *v = s);
                    }
                    send(*a, out);
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut start = 0;
                    for &p in parts {
                        let rows = val(p).rows();
                        let data = g.data()[start * c..(start + rows) * c].to_vec();
                        send(p, Tensor::from_parts(vec![rows, c], data));
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = val(p).cols();
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        send(p, Tensor::from_parts(vec![rows, c], data));
                        offset += c;
                    }
                }
                Op::GatherRows(a, index) => {
                    let x = val(*a);
                    let c = x.cols();
                    let mut out = Tensor::zeros(x.shape());
                    for (k, &i) in index.iter().enumerate() {
                        let src = &g.data()[k * c..(k + 1) * c];
                        for (o, s) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                    send(*a, out);
                }
                Op::Transpose(a) => send(*a, g.transpose()?),
            }
        }

        let leaves = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(id, n)| {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (id, g)
            })
            .collect();
        Ok(Gradients { leaves })
    }
}

/// Gradients of a scalar with respect to the leaves of its tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<(usize, Tensor)>,
}

impl Gradients {
    /// Gradient for `leaf`; zeros when the leaf did not influence the root.
    ///
    /// Panics if `leaf` is not a leaf of the tape that produced these
    /// gradients.
    pub fn wrt(&self, leaf: Var<'_>) -> &Tensor {
        self.get(leaf).expect("variable is not a leaf on this tape")
    }

    pub fn get(&self, leaf: Var<'_>) -> Option<&Tensor> {
        self.leaves
            .binary_search_by_key(&leaf.id, |(id, _)| *id)
            .ok()
            .map(|i| &self.leaves[i].1)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn check_tape(&self, other: Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables from different tapes");
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(rhs);
        let v = self.value().matmul(&rhs.value())?;
        self.tape.record(v, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id])
    }

    /// `sparse · self`; the sparse operand is a constant.
    pub fn sparse_lmul(self, sparse: &Rc<SparseMatrix>) -> Result<Var<'t>> {
        let v = sparse.matmul_dense(&self.value())?;
        self.tape
            .record(v, Op::SparseMatMul(Rc::clone(sparse), self.id), &[self.id])
    }

    /// Elementwise sum. `rhs` may also be a `1×n` row added to every row of
    /// an `m×n` matrix.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.shape() == b.shape() {
            let v = a.zip_map(&b, |x, y| x + y);
            return self.tape.record(v, Op::Add(self.id, rhs.id), &[self.id, rhs.id]);
        }
        if a.is_matrix() && b.is_matrix() && b.rows() == 1 && b.cols() == a.cols() {
            let c = a.cols();
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(c) {
                for (o, y) in row.iter_mut().zip(b.data()) {
                    *o += y;
                }
            }
            let v = Tensor::from_parts(a.shape().to_vec(), out);
            return self.tape.record(v, Op::AddRow(self.id, rhs.id), &[self.id, rhs.id]);
        }
        Err(TensorError::ShapeMismatch {
            op: "add",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        same_shape("sub", &a, &b)?;
        let v = a.zip_map(&b, |x, y| x - y);
        self.tape.record(v, Op::Sub(self.id, rhs.id), &[self.id, rhs.id])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        same_shape("mul", &a, &b)?;
        let v = a.zip_map(&b, |x, y| x * y);
        self.tape.record(v, Op::Mul(self.id, rhs.id), &[self.id, rhs.id])
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x * s);
        self.tape.record(v, Op::ScalarMul(self.id, s), &[self.id])
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x + s);
        self.tape.record(v, Op::AddScalar(self.id), &[self.id])
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        let v = self.value().map(|x| x.max(0.0));
        self.tape.record(v, Op::Relu(self.id), &[self.id])
    }

    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let v = self.value().softmax_rows()?;
        self.tape.record(v, Op::SoftmaxRows(self.id), &[self.id])
    }

    pub fn log_softmax_rows(self) -> Result<Var<'t>> {
        let v = self.value().log_softmax_rows()?;
        self.tape.record(v, Op::LogSoftmaxRows(self.id), &[self.id])
    }

    pub fn log(self) -> Result<Var<'t>> {
        let x = self.value();
        if self.tape.checked {
            if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
                return Err(TensorError::Domain {
                    op: "log",
                    index,
                    value,
                });
            }
        }
        self.tape.record(x.map(f64::ln), Op::Log(self.id), &[self.id])
    }

    pub fn exp(self) -> Result<Var<'t>> {
        let v = self.value().map(f64::exp);
        self.tape.record(v, Op::Exp(self.id), &[self.id])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.tape
            .record(v, Op::Sum(self.id), &[self.id])
            .expect("a sum of finite values is finite")
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(self) -> Result<Var<'t>> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        self.tape.record(v, Op::Mean(self.id), &[self.id])
    }

    /// Row-wise L2 normalization with the norm floored at [`NORM_FLOOR`].
    pub fn l2_normalize_rows(self) -> Result<Var<'t>> {
        let v = self.value().l2_normalize_rows(NORM_FLOOR)?;
        self.tape.record(v, Op::L2NormalizeRows(self.id), &[self.id])
    }

    /// `m×n → m×1` squared Euclidean norm of each row.
    pub fn squared_row_norms(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, _) = x.expect_matrix("squared_row_norms")?;
        let data = (0..r).map(|i| dot(x.row(i), x.row(i))).collect();
        self.tape
            .record(Tensor::from_parts(vec![r, 1], data), Op::SquaredRowNorms(self.id), &[self.id])
    }

    /// `m×n → m×1` sum of each row.
    pub fn row_sums(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, _) = x.expect_matrix("row_sums")?;
        let data = (0..r).map(|i| x.row(i).iter().sum()).collect();
        self.tape
            .record(Tensor::from_parts(vec![r, 1], data), Op::RowSums(self.id), &[self.id])
    }

    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let v = self.value().gather_rows(index)?;
        self.tape
            .record(v, Op::GatherRows(self.id, Rc::new(index.to_vec())), &[self.id])
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let v = self.value().transpose()?;
        self.tape.record(v, Op::Transpose(self.id), &[self.id])
    }

    /// Same value, no gradient flow.
    pub fn detach(self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }

    /// Forward value `forward`, gradient routed unchanged to `self`.
    /// This is the straight-through combinator: the surrogate stays
    /// differentiable while the forward pass sees a different value of the
    /// same shape.
    pub fn with_forward(self, forward: Tensor) -> Result<Var<'t>> {
        same_shape("with_forward", &self.value(), &forward)?;
        self.tape.record(forward, Op::PassThrough(self.id), &[self.id])
    }
}

/// Stacks matrices vertically.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().expect("concat_rows of nothing");
    let tape = first.tape;
    let cols = first.value().expect_matrix("concat_rows")?.1;
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        let v = p.value();
        let (r, c) = v.expect_matrix("concat_rows")?;
        if c != cols {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                lhs: first.shape(),
                rhs: v.shape().to_vec(),
            });
        }
        data.extend_from_slice(v.data());
        rows += r;
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.record(Tensor::from_parts(vec![rows, cols], data), Op::ConcatRows(ids.clone()), &ids)
}

/// Joins matrices side by side.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().expect("concat_cols of nothing");
    let tape = first.tape;
    let rows = first.value().expect_matrix("concat_cols")?.0;
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    for v in &values {
        let (r, _) = v.expect_matrix("concat_cols")?;
        if r != rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: first.shape(),
                rhs: v.shape().to_vec(),
            });
        }
    }
    let total: usize = values.iter().map(|v| v.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for v in &values {
            data.extend_from_slice(v.row(r));
        }
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.record(Tensor::from_parts(vec![rows, total], data), Op::ConcatCols(ids.clone()), &ids)
}

/// Compares the tape gradient of `f` at `x` against central differences.
///
/// Returns the largest coordinate-wise relative error
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    assert!(eps > 0.0, "finite difference step must be positive");
    let analytic = {
        let tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let out = f(&tape, leaf)?;
        tape.backward(out)?.wrt(leaf).clone()
    };
    let eval = |point: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let var = tape.constant(point);
        Ok(f(&tape, var)?.item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[&[1.0, 2.0, 3.0]]));
        let y = x.mul(x).unwrap().sum();
        assert_eq!(y.item(), 14.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn linear_map_gradient_is_column_sums() {
        let tape = Tape::new();
        let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let x = tape.leaf(t(&[&[0.3], &[-0.7]]));
        let y = a.matmul(x).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[9.0, 12.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[&[1.0, 2.0]]));
        let unused = tape.leaf(t(&[&[5.0]]));
        let y = x.sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(unused).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[&[1.0, 2.0]]));
        assert!(matches!(tape.backward(x), Err(TensorError::Rank { .. })));
    }

    #[test]
    fn checked_log_rejects_non_positive() {
        let tape = Tape::checked();
        let x = tape.leaf(t(&[&[1.0, 0.0]]));
        assert!(matches!(x.log(), Err(TensorError::Domain { op: "log", index: 1, .. })));
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[3, 2]));
        let err = a.sub(b).unwrap_err().to_string();
        assert!(err.contains("sub") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn negative_log_softmax_gradient_is_softmax_minus_one_hot() {
        let logits = t(&[&[0.3, -1.2, 2.0, 0.1]]);
        let tape = Tape::new();
        let x = tape.leaf(logits.clone());
        let target = tape.constant(t(&[&[0.0, 0.0, 1.0, 0.0]]));
        let y = x.softmax_rows().unwrap().log().unwrap().mul(target).unwrap().sum().neg().unwrap();
        let g = tape.backward(y).unwrap();
        let p = logits.softmax_rows().unwrap();
        let expected: Vec<f64> = p
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v - if i == 2 { 1.0 } else { 0.0 })
            .collect();
        for (a, b) in g.wrt(x).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn pass_through_routes_gradient_to_surrogate() {
        let tape = Tape::new();
        let soft = tape.leaf(t(&[&[0.2, 0.8]]));
        let hard = soft.with_forward(t(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(hard.value().data(), &[0.0, 1.0]);
        let w = tape.constant(t(&[&[3.0, 5.0]]));
        let y = hard.mul(w).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(soft).data(), &[3.0, 5.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[&[2.0]]));
        let y = x.mul(x.detach()).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0]);
    }

    #[test]
    fn constant_function_has_exactly_zero_gradient() {
        let x = t(&[&[0.4, -0.2]]);
        let err = finite_diff_check(|tape, _x| Ok(tape.constant(Tensor::scalar(3.0))), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }
}
