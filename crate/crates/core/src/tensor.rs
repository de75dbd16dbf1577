//! Dense row-major tensors and compressed-row sparse matrices.
//!
//! Everything here is plain data plus the numeric kernels the autodiff tape
//! calls into. Shapes are explicit: the only broadcasts anywhere in the crate
//! are scalar×tensor and row-vector+matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Errors raised by tensor construction and tensor operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: domain error, value {value} at flat index {index}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{op}: index {index} out of range for {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid sparse matrix: {0}")]
    Sparse(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Rows at or above this many output elements are computed in parallel.
/// Each output row is produced by a single thread in a fixed order, so the
/// results are bitwise identical to the serial path.
const PAR_MIN_ELEMS: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Checked constructor: the element count must match the shape and every
    /// entry must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { index, value });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor without the finiteness scan. Panics on a length
    /// mismatch, which is always a bug in the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match data length {}",
            data.len()
        );
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; shape.iter().product()])
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a matrix. Panics on other ranks.
    pub fn rows(&self) -> usize {
        assert!(self.is_matrix(), "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    /// Column count of a matrix. Panics on other ranks.
    pub fn cols(&self) -> usize {
        assert!(self.is_matrix(), "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Self::from_parts(shape, self.data.clone()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.expect_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    pub(crate) fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(TensorError::Rank {
                op,
                expected: "matrix",
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = other.expect_matrix("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self, other));
        }
        let mut out = vec![0.0; m * n];
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        run_rows(&mut out, n, m * n * k, kernel);
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.expect_matrix("matmul_nt")?;
        let (n, k2) = other.expect_matrix("matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self, other));
        }
        let mut out = vec![0.0; m * n];
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &other.data[j * k..(j + 1) * k];
                *o = dot(a_row, b_row);
            }
        };
        run_rows(&mut out, n, m * n * k, kernel);
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let (k, m) = self.expect_matrix("matmul_tn")?;
        let (k2, n) = other.expect_matrix("matmul_tn")?;
        if k != k2 {
            return Err(shape_err("matmul_tn", self, other));
        }
        let mut out = vec![0.0; m * n];
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            for p in 0..k {
                let a = self.data[p * m + i];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        run_rows(&mut out, n, m * n * k, kernel);
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// Row-wise softmax with the per-row maximum subtracted first.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (r, c) = self.expect_matrix("softmax_rows")?;
        let mut out = self.data.clone();
        for i in 0..r {
            softmax_in_place(&mut out[i * c..(i + 1) * c]);
        }
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    /// Row-wise log-softmax in the shifted-max form.
    pub fn log_softmax_rows(&self) -> Result<Self> {
        let (r, c) = self.expect_matrix("log_softmax_rows")?;
        let mut out = self.data.clone();
        for i in 0..r {
            log_softmax_in_place(&mut out[i * c..(i + 1) * c]);
        }
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    /// Divides each row by its Euclidean norm, floored at `floor`.
    pub fn l2_normalize_rows(&self, floor: f64) -> Result<Self> {
        let (r, c) = self.expect_matrix("l2_normalize_rows")?;
        let mut out = self.data.clone();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let n = dot(row, row).sqrt().max(floor);
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    pub fn gather_rows(&self, index: &[usize]) -> Result<Self> {
        let (r, c) = self.expect_matrix("gather_rows")?;
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    len: r,
                });
            }
            out.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Ok(Self::from_parts(vec![index.len(), c], out))
    }

    /// Index of the largest entry in each row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let c = self.cols();
        (0..self.rows())
            .map(|i| argmax(&self.data[i * c..(i + 1) * c]))
            .collect()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    }
}

fn run_rows<F>(out: &mut [f64], row_len: usize, work: usize, kernel: F)
where
    F: Fn((usize, &mut [f64])) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    if work >= PAR_MIN_ELEMS * 8 {
        out.par_chunks_mut(row_len).enumerate().for_each(kernel);
    } else {
        out.chunks_mut(row_len).enumerate().for_each(kernel);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v -= lse);
}

/// Sparse matrix in compressed-row layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 {
            return Err(TensorError::Sparse(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(TensorError::Sparse(
                "row_offsets must start at 0 and be non-decreasing".into(),
            ));
        }
        let nnz = row_offsets[rows];
        if col_indices.len() != nnz || values.len() != nnz {
            return Err(TensorError::Sparse(format!(
                "expected {nnz} stored entries, got {} indices and {} values",
                col_indices.len(),
                values.len()
            )));
        }
        if let Some(&c) = col_indices.iter().find(|&&c| c >= cols) {
            return Err(TensorError::Sparse(format!(
                "column index {c} out of range for {cols} columns"
            )));
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a CSR matrix from (row, col, value) triplets. Duplicate
    /// coordinates are summed; columns within a row end up sorted.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(TensorError::Sparse(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(rows, cols, row_offsets, col_indices, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored (column, value) pairs of row `r`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row_entries(r)
            .filter(|&(col, _)| col == c)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.data[r * self.cols + c] += v;
            }
        }
        t
    }

    /// `self · dense`.
    pub fn matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        let (k, n) = dense.expect_matrix("sparse_dense_matmul")?;
        if k != self.cols {
            return Err(TensorError::ShapeMismatch {
                op: "sparse_dense_matmul",
                lhs: vec![self.rows, self.cols],
                rhs: dense.shape.clone(),
            });
        }
        let mut out = vec![0.0; self.rows * n];
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            for (c, v) in self.row_entries(i) {
                let d_row = &dense.data[c * n..(c + 1) * n];
                for (o, &d) in out_row.iter_mut().zip(d_row) {
                    *o += v * d;
                }
            }
        };
        run_rows(&mut out, n, self.nnz() * n, kernel);
        Ok(Tensor::from_parts(vec![self.rows, n], out))
    }

    /// `selfᵀ · dense`, computed by a serial scatter so the accumulation
    /// order is fixed.
    pub fn transpose_matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        let (k, n) = dense.expect_matrix("sparse_dense_matmul_t")?;
        if k != self.rows {
            return Err(TensorError::ShapeMismatch {
                op: "sparse_dense_matmul_t",
                lhs: vec![self.cols, self.rows],
                rhs: dense.shape.clone(),
            });
        }
        let mut out = vec![0.0; self.cols * n];
        for i in 0..self.rows {
            let g_row = &dense.data[i * n..(i + 1) * n];
            for (c, v) in self.row_entries(i) {
                let o_row = &mut out[c * n..(c + 1) * n];
                for (o, &g) in o_row.iter_mut().zip(g_row) {
                    *o += v * g;
                }
            }
        }
        Ok(Tensor::from_parts(vec![self.cols, n], out))
    }

    /// The rows listed in `index`, in that order.
    pub fn select_rows(&self, index: &[usize]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(index.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for &r in index {
            if r >= self.rows {
                return Err(TensorError::Index {
                    op: "select_rows",
                    index: r,
                    len: self.rows,
                });
            }
            let span = self.row_offsets[r]..self.row_offsets[r + 1];
            cols.extend_from_slice(&self.col_indices[span.clone()]);
            vals.extend_from_slice(&self.values[span]);
            offsets.push(cols.len());
        }
        Ok(Self {
            rows: index.len(),
            cols: self.cols,
            row_offsets: offsets,
            col_indices: cols,
            values: vals,
        })
    }

    /// Returns `P S Pᵀ` where `perm[old] = new`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<Self> {
        let mut trips = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                trips.push((perm[r], perm[c], v));
            }
        }
        Self::from_triplets(self.rows, self.cols, &trips)
    }
}
