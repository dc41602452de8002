//! Dense row-major matrices and a tape for reverse-mode differentiation.
//!
//! The operation set is deliberately small: exactly what the planner needs.
//! Every value on a [`Tape`] is a 2-D [`Tensor`]; vectors are `1×n` or `n×1`
//! matrices. There is no implicit broadcasting. The two broadcast-like
//! operations ([`Tape::add_row`] and [`Tape::mul_col`]) and the tiling
//! operation ([`Tape::broadcast_rows`]) check their shapes strictly.
//!
//! ```
//! use pep::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
//! let x = tape.constant(Tensor::from_rows(&[&[1.0], &[1.0]]));
//! let y = tape.matmul(w, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[1.0, 1.0, 1.0, 1.0]);
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense `rows × cols` matrix of `f64` stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} {:?}", self.shape(), self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::Contract(format!(
                "data length {} does not match shape [{rows}, {cols}]",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// Stacks 2-D points as an `n×2` matrix.
    pub fn from_points(points: &[[f64; 2]]) -> Self {
        Self {
            rows: points.len(),
            cols: 2,
            data: points.iter().flat_map(|p| p.iter().copied()).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Returns row `r` of an `n×2` matrix as a point.
    pub fn point(&self, r: usize) -> [f64; 2] {
        debug_assert_eq!(self.cols, 2);
        [self.data[2 * r], self.data[2 * r + 1]]
    }

    pub fn to_points(&self) -> Vec<[f64; 2]> {
        assert_eq!(self.cols, 2, "to_points needs an n×2 matrix");
        self.data.chunks_exact(2).map(|p| [p[0], p[1]]).collect()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Plain matrix product without a tape.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(TensorError::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        matmul_into(
            &self.data,
            &other.data,
            &mut out.data,
            self.rows,
            self.cols,
            other.cols,
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// `out += a[m×k] · b[k×n]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += aᵀ[m×k]ᵀ · b[m×n]`, i.e. `out[k×n]`.
fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a[m×n] · bᵀ` where `b` is `k×n`, giving `out[m×k]`.
fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Index of the smallest value; ties resolve to the lowest index.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] <= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BlockMatMul { weight: Var, x: Var, blocks: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    RowNorm(Var),
    RowDot(Var, Var),
    Reflect(Var, Var),
}

/// Records operations in execution order so that [`Tape::backward`] can
/// replay them in reverse. A tape belongs to a single forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let [r, c] = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.values[var.0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Records an input whose gradient will be read back.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records an input that is not differentiated. Gradients still flow
    /// into it but are simply never read.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.values[a.0].matmul(&self.values[b.0])?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Applies `weight[o×i]` to each of `blocks` consecutive `i×d` row blocks
    /// of `x`, producing `blocks` stacked `o×d` blocks.
    pub fn block_matmul(&mut self, weight: Var, x: Var, blocks: usize) -> Result<Var> {
        let w = &self.values[weight.0];
        let xv = &self.values[x.0];
        if blocks == 0 || xv.rows != blocks * w.cols {
            return Err(shape_err("block_matmul", w, xv));
        }
        let (o, i, d) = (w.rows, w.cols, xv.cols);
        let mut out = Tensor::zeros(blocks * o, d);
        for b in 0..blocks {
            matmul_into(
                &w.data,
                &xv.data[b * i * d..(b + 1) * i * d],
                &mut out.data[b * o * d..(b + 1) * o * d],
                o,
                i,
                d,
            );
        }
        Ok(self.push(out, Op::BlockMatMul { weight, x, blocks }))
    }

    fn zip_with(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av, bv));
        }
        Ok(Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av
                .data
                .iter()
                .zip(&bv.data)
                .map(|(x, y)| f(*x, *y))
                .collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut out = self.values[a.0].clone();
        out.scale_in_place(factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Adds `bias[1×d]` to every row of `a[n×d]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (&self.values[a.0], &self.values[bias.0]);
        if bv.rows != 1 || bv.cols != av.cols {
            return Err(shape_err("add_row", av, bv));
        }
        let mut out = av.clone();
        for row in out.data.chunks_exact_mut(av.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    /// Scales row `r` of `a[n×d]` by `s[r]` where `s` is `n×1`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (av, sv) = (&self.values[a.0], &self.values[s.0]);
        if sv.cols != 1 || sv.rows != av.rows {
            return Err(shape_err("mul_col", av, sv));
        }
        let mut out = av.clone();
        if av.cols > 0 {
            for (row, f) in out.data.chunks_exact_mut(av.cols).zip(&sv.data) {
                for o in row {
                    *o *= f;
                }
            }
        }
        Ok(self.push(out, Op::MulCol(a, s)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let out = Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().map(|&x| sigmoid(x)).collect(),
        };
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let out = Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().map(|x| x.tanh()).collect(),
        };
        self.push(out, Op::Tanh(a))
    }

    /// Softmax over each row, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        let cols = out.cols;
        if cols > 0 {
            for row in out.data.chunks_exact_mut(cols) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        let cols = out.cols;
        if cols > 0 {
            for row in out.data.chunks_exact_mut(cols) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols of nothing".into()))?;
        let rows = self.values[first.0].rows;
        for p in parts {
            let v = &self.values[p.0];
            if v.rows != rows {
                return Err(shape_err("concat_cols", &self.values[first.0], v));
            }
        }
        let cols: usize = parts.iter().map(|p| self.values[p.0].cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.values[p.0].row(r));
            }
        }
        let out = Tensor { rows, cols, data };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows of nothing".into()))?;
        let cols = self.values[first.0].cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = &self.values[p.0];
            if v.cols != cols {
                return Err(shape_err("concat_rows", &self.values[first.0], v));
            }
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        let out = Tensor { rows, cols, data };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = &self.values[a.0];
        if rows * cols != av.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                left: av.shape(),
                right: [rows, cols],
            });
        }
        let out = Tensor {
            rows,
            cols,
            data: av.data.clone(),
        };
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = &self.values[a.0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= av.rows) {
            return Err(TensorError::Contract(format!(
                "gather_rows: index {bad} out of range for {:?}",
                av.shape()
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * av.cols);
        for &i in indices {
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor {
            rows: indices.len(),
            cols: av.cols,
            data,
        };
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    /// Repeats the rows of `a[r×d]` cyclically to `n` rows. This is the only
    /// broadcast the tape offers (e.g. an R² mean over C channels).
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let r = self.values[a.0].rows;
        if r == 0 || n % r != 0 {
            return Err(TensorError::Contract(format!(
                "broadcast_rows: {n} rows is not a multiple of {r}"
            )));
        }
        let idx: Vec<usize> = (0..n).map(|i| i % r).collect();
        self.gather_rows(a, &idx)
    }

    /// `out[targets[r]] += a[r]`, producing `segments` rows.
    pub fn segment_sum(&mut self, a: Var, targets: &[usize], segments: usize) -> Result<Var> {
        let av = &self.values[a.0];
        if targets.len() != av.rows {
            return Err(TensorError::Contract(format!(
                "segment_sum: {} targets for {} rows",
                targets.len(),
                av.rows
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= segments) {
            return Err(TensorError::Contract(format!(
                "segment_sum: target {bad} out of range for {segments} segments"
            )));
        }
        let mut out = Tensor::zeros(segments, av.cols);
        for (r, &t) in targets.iter().enumerate() {
            let src = av.row(r);
            for (o, s) in out.data[t * av.cols..(t + 1) * av.cols].iter_mut().zip(src) {
                *o += s;
            }
        }
        Ok(self.push(out, Op::SegmentSum(a, targets.to_vec())))
    }

    /// Column means, `[n×d] -> [1×d]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = &self.values[a.0];
        if av.rows == 0 {
            return Err(TensorError::Contract("mean_rows of an empty matrix".into()));
        }
        let mut out = Tensor::zeros(1, av.cols);
        for row in av.data.chunks_exact(av.cols.max(1)) {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.scale_in_place(1.0 / av.rows as f64);
        Ok(self.push(out, Op::MeanRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Euclidean norm of each row of an `n×2` matrix, as `n×1`.
    /// The gradient at a zero row is defined as zero.
    pub fn rowwise_l2norm(&mut self, a: Var) -> Result<Var> {
        let av = &self.values[a.0];
        if av.cols != 2 {
            return Err(TensorError::Shape {
                op: "rowwise_l2norm",
                left: av.shape(),
                right: [av.rows, 2],
            });
        }
        let data = av.data.chunks_exact(2).map(|p| p[0].hypot(p[1])).collect();
        let out = Tensor {
            rows: av.rows,
            cols: 1,
            data,
        };
        Ok(self.push(out, Op::RowNorm(a)))
    }

    /// Dot product of corresponding rows of two `n×2` matrices, as `n×1`.
    pub fn rowwise_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.shape() != bv.shape() || av.cols != 2 {
            return Err(shape_err("rowwise_dot", av, bv));
        }
        let data = av
            .data
            .chunks_exact(2)
            .zip(bv.data.chunks_exact(2))
            .map(|(p, q)| p[0] * q[0] + p[1] * q[1])
            .collect();
        let out = Tensor {
            rows: av.rows,
            cols: 1,
            data,
        };
        Ok(self.push(out, Op::RowDot(a, b)))
    }

    /// Per row of two `n×2` matrices: returns `q` when `⟨q,k⟩ ≥ 0` or `k = 0`,
    /// otherwise `q` mirrored across the line orthogonal to `k`,
    /// `q − 2⟨q,k⟩/⟨k,k⟩ · k`.
    pub fn reflect_negative(&mut self, q: Var, k: Var) -> Result<Var> {
        let (qv, kv) = (&self.values[q.0], &self.values[k.0]);
        if qv.shape() != kv.shape() || qv.cols != 2 {
            return Err(shape_err("reflect_negative", qv, kv));
        }
        let mut out = qv.clone();
        for (o, kr) in out.data.chunks_exact_mut(2).zip(kv.data.chunks_exact(2)) {
            let qk = o[0] * kr[0] + o[1] * kr[1];
            let kk = kr[0] * kr[0] + kr[1] * kr[1];
            if qk < 0.0 && kk > 0.0 {
                let s = 2.0 * qk / kk;
                o[0] -= s * kr[0];
                o[1] -= s * kr[1];
            }
        }
        Ok(self.push(out, Op::Reflect(q, k)))
    }

    /// Reverse pass from a `1×1` loss. Every node is visited once, in reverse
    /// recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.values[loss.0];
        if lv.shape() != [1, 1] {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.values.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.values.iter().map(Tensor::shape).collect(),
        })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.values[idx];
        let acc = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let accumulate_with =
            |grads: &mut [Option<Tensor>], v: Var, f: &mut dyn FnMut(&mut Tensor)| {
                let shape = self.values[v.0].shape();
                let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
                f(slot);
            };

        match &self.ops[idx] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                let (m, k, n) = (av.rows, av.cols, bv.cols);
                accumulate_with(grads, *a, &mut |da| {
                    matmul_nt_into(&g.data, &bv.data, &mut da.data, m, n, k)
                });
                accumulate_with(grads, *b, &mut |db| {
                    matmul_tn_into(&av.data, &g.data, &mut db.data, m, k, n)
                });
            }
            Op::BlockMatMul { weight, x, blocks } => {
                let (w, xv) = (&self.values[weight.0], &self.values[x.0]);
                let (o, i, d) = (w.rows, w.cols, xv.cols);
                accumulate_with(grads, *weight, &mut |dw| {
                    for b in 0..*blocks {
                        matmul_nt_into(
                            &g.data[b * o * d..(b + 1) * o * d],
                            &xv.data[b * i * d..(b + 1) * i * d],
                            &mut dw.data,
                            o,
                            d,
                            i,
                        );
                    }
                });
                accumulate_with(grads, *x, &mut |dx| {
                    for b in 0..*blocks {
                        matmul_tn_into(
                            &w.data,
                            &g.data[b * o * d..(b + 1) * o * d],
                            &mut dx.data[b * i * d..(b + 1) * i * d],
                            o,
                            i,
                            d,
                        );
                    }
                });
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.scale_in_place(-1.0);
                acc(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                accumulate_with(grads, *a, &mut |da| {
                    for ((d, gv), y) in da.data.iter_mut().zip(&g.data).zip(&bv.data) {
                        *d += gv * y;
                    }
                });
                accumulate_with(grads, *b, &mut |db| {
                    for ((d, gv), x) in db.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *d += gv * x;
                    }
                });
            }
            Op::Scale(a, f) => {
                let mut d = g.clone();
                d.scale_in_place(*f);
                acc(grads, *a, d);
            }
            Op::AddRow(a, bias) => {
                acc(grads, *a, g.clone());
                accumulate_with(grads, *bias, &mut |db| {
                    for row in g.data.chunks_exact(g.cols.max(1)) {
                        for (d, v) in db.data.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                });
            }
            Op::MulCol(a, s) => {
                let (av, sv) = (&self.values[a.0], &self.values[s.0]);
                let cols = av.cols;
                accumulate_with(grads, *a, &mut |da| {
                    if cols == 0 {
                        return;
                    }
                    for ((drow, grow), f) in da
                        .data
                        .chunks_exact_mut(cols)
                        .zip(g.data.chunks_exact(cols))
                        .zip(&sv.data)
                    {
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += gv * f;
                        }
                    }
                });
                accumulate_with(grads, *s, &mut |ds| {
                    if cols == 0 {
                        return;
                    }
                    for ((d, grow), arow) in ds
                        .data
                        .iter_mut()
                        .zip(g.data.chunks_exact(cols))
                        .zip(av.data.chunks_exact(cols))
                    {
                        *d += grow.iter().zip(arow).map(|(x, y)| x * y).sum::<f64>();
                    }
                });
            }
            Op::Sigmoid(a) => {
                accumulate_with(grads, *a, &mut |da| {
                    for ((d, gv), y) in da.data.iter_mut().zip(&g.data).zip(&out.data) {
                        *d += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                accumulate_with(grads, *a, &mut |da| {
                    for ((d, gv), y) in da.data.iter_mut().zip(&g.data).zip(&out.data) {
                        *d += gv * (1.0 - y * y);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let cols = out.cols;
                accumulate_with(grads, *a, &mut |da| {
                    if cols == 0 {
                        return;
                    }
                    for ((drow, grow), yrow) in da
                        .data
                        .chunks_exact_mut(cols)
                        .zip(g.data.chunks_exact(cols))
                        .zip(out.data.chunks_exact(cols))
                    {
                        let gy: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gv - gy);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let cols = out.cols;
                accumulate_with(grads, *a, &mut |da| {
                    if cols == 0 {
                        return;
                    }
                    for ((drow, grow), yrow) in da
                        .data
                        .chunks_exact_mut(cols)
                        .zip(g.data.chunks_exact(cols))
                        .zip(out.data.chunks_exact(cols))
                    {
                        let gsum: f64 = grow.iter().sum();
                        for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gv - y.exp() * gsum;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.values[p.0].cols;
                    accumulate_with(grads, *p, &mut |dp| {
                        for r in 0..g.rows {
                            let src = &g.data[r * g.cols + offset..r * g.cols + offset + w];
                            for (d, s) in dp.data[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.values[p.0].len();
                    accumulate_with(grads, *p, &mut |dp| {
                        for (d, s) in dp.data.iter_mut().zip(&g.data[offset..offset + n]) {
                            *d += s;
                        }
                    });
                    offset += n;
                }
            }
            Op::Reshape(a) => {
                let shape = self.values[a.0].shape();
                acc(
                    grads,
                    *a,
                    Tensor {
                        rows: shape[0],
                        cols: shape[1],
                        data: g.data.clone(),
                    },
                );
            }
            Op::GatherRows(a, indices) => {
                let cols = g.cols;
                accumulate_with(grads, *a, &mut |da| {
                    for (r, &i) in indices.iter().enumerate() {
                        for (d, s) in da.data[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&g.data[r * cols..(r + 1) * cols])
                        {
                            *d += s;
                        }
                    }
                });
            }
            Op::SegmentSum(a, targets) => {
                let cols = g.cols;
                accumulate_with(grads, *a, &mut |da| {
                    for (r, &t) in targets.iter().enumerate() {
                        for (d, s) in da.data[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(&g.data[t * cols..(t + 1) * cols])
                        {
                            *d += s;
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let n = self.values[a.0].rows as f64;
                let cols = g.cols;
                accumulate_with(grads, *a, &mut |da| {
                    for row in da.data.chunks_exact_mut(cols.max(1)) {
                        for (d, s) in row.iter_mut().zip(&g.data) {
                            *d += s / n;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = g.data[0];
                accumulate_with(grads, *a, &mut |da| {
                    for d in &mut da.data {
                        *d += s;
                    }
                });
            }
            Op::RowNorm(a) => {
                let av = &self.values[a.0];
                accumulate_with(grads, *a, &mut |da| {
                    for (r, (d, p)) in da
                        .data
                        .chunks_exact_mut(2)
                        .zip(av.data.chunks_exact(2))
                        .enumerate()
                    {
                        let n = out.data[r];
                        if n > 0.0 {
                            let f = g.data[r] / n;
                            d[0] += f * p[0];
                            d[1] += f * p[1];
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                accumulate_with(grads, *a, &mut |da| {
                    for (r, (d, q)) in da
                        .data
                        .chunks_exact_mut(2)
                        .zip(bv.data.chunks_exact(2))
                        .enumerate()
                    {
                        d[0] += g.data[r] * q[0];
                        d[1] += g.data[r] * q[1];
                    }
                });
                accumulate_with(grads, *b, &mut |db| {
                    for (r, (d, p)) in db
                        .data
                        .chunks_exact_mut(2)
                        .zip(av.data.chunks_exact(2))
                        .enumerate()
                    {
                        d[0] += g.data[r] * p[0];
                        d[1] += g.data[r] * p[1];
                    }
                });
            }
            Op::Reflect(q, k) => {
                let (qv, kv) = (&self.values[q.0], &self.values[k.0]);
                let rows = qv.rows;
                let mut dq = Tensor::zeros(rows, 2);
                let mut dk = Tensor::zeros(rows, 2);
                for r in 0..rows {
                    let (qx, qy) = (qv.data[2 * r], qv.data[2 * r + 1]);
                    let (kx, ky) = (kv.data[2 * r], kv.data[2 * r + 1]);
                    let (gx, gy) = (g.data[2 * r], g.data[2 * r + 1]);
                    let qk = qx * kx + qy * ky;
                    let kk = kx * kx + ky * ky;
                    if qk < 0.0 && kk > 0.0 {
                        let s = qk / kk;
                        let gk = gx * kx + gy * ky;
                        dq.data[2 * r] = gx - 2.0 * gk * kx / kk;
                        dq.data[2 * r + 1] = gy - 2.0 * gk * ky / kk;
                        // ∂s/∂k = q/kk − 2 s k/kk
                        let dsx = qx / kk - 2.0 * s * kx / kk;
                        let dsy = qy / kk - 2.0 * s * ky / kk;
                        dk.data[2 * r] = -2.0 * (gk * dsx + s * gx);
                        dk.data[2 * r + 1] = -2.0 * (gk * dsy + s * gy);
                    } else {
                        dq.data[2 * r] = gx;
                        dq.data[2 * r + 1] = gy;
                    }
                }
                acc(grads, *q, dq);
                acc(grads, *k, dk);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    /// Central-difference check of `f` with respect to each input.
    fn check_grad(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
        let h = 1e-6;
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();

        let eval = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
            let loss = f(&mut tape, &vars);
            tape.value(loss).item()
        };

        for (n, v) in vars.iter().enumerate() {
            let analytic = grads.wrt(*v);
            for i in 0..inputs[n].len() {
                let mut plus = inputs.clone();
                plus[n].data[i] += h;
                let mut minus = inputs.clone();
                minus[n].data[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data[i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                assert!(
                    err < tol,
                    "input {n} element {i}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matmul_identity_and_projector() {
        let i2 = Tensor::identity(2);
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(i2.matmul(&m).unwrap(), m);

        let p = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let v = Tensor::column(&[5.0, 7.0]);
        assert_eq!(p.matmul(&v).unwrap().data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                left: [2, 3],
                right: [2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let weights = random(&mut rng, 3, 2);
        check_grad(
            vec![a, b],
            |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                let w = t.constant(weights.clone());
                let z = t.mul(y, w).unwrap();
                t.sum(z)
            },
            1e-7,
        );
    }

    #[test]
    fn rowwise_l2norm_values_and_zero_row() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[&[3.0, 4.0], &[0.0, 0.0]]));
        let n = tape.rowwise_l2norm(a).unwrap();
        assert_eq!(tape.value(n).data(), &[5.0, 0.0]);
        let s = tape.sum(n);
        let g = tape.backward(s).unwrap();
        let expect = Tensor::from_rows(&[&[0.6, 0.8], &[0.0, 0.0]]);
        assert!(g.wrt(a).max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn rowwise_l2norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 5, 2);
        let w = random(&mut rng, 5, 1);
        check_grad(
            vec![a],
            |t, v| {
                let n = t.rowwise_l2norm(v[0]).unwrap();
                let w = t.constant(w.clone());
                let z = t.mul(n, w).unwrap();
                t.sum(z)
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row_vector(&[0.0, 0.0]));
        let s = tape.softmax_rows(a);
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let b = tape.leaf(Tensor::row_vector(&[1000.0, 0.0]));
        let s = tape.softmax_rows(b);
        let v = tape.value(s).data();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);
    }

    #[test]
    fn softmax_gradient_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 1, 4);
        let w = random(&mut rng, 1, 4);
        {
            let mut tape = Tape::new();
            let x = tape.leaf(a.clone());
            let s = tape.softmax_rows(x);
            let total: f64 = tape.value(s).data().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(tape.value(s).data().iter().all(|&p| p > 0.0));
        }
        check_grad(
            vec![a],
            |t, v| {
                let s = t.softmax_rows(v[0]);
                let w = t.constant(w.clone());
                let z = t.mul(s, w).unwrap();
                t.sum(z)
            },
            1e-6,
        );
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(a), Err(TensorError::Contract(_))));
    }

    #[test]
    fn sum_of_linear_map_gives_repeated_input_rows() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_rows(&[&[0.3, -1.0, 2.0], &[1.5, 0.0, 0.7]]));
        let x = tape.constant(Tensor::column(&[1.0, 2.0, 3.0]));
        let unused = tape.leaf(Tensor::full(2, 2, 4.0));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(g.get(unused).is_none());
        assert!(g.wrt(unused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_argmin_tie_break_low_index() {
        assert_eq!(argmax(&[0.2, 0.9, 0.9]), Some(1));
        assert_eq!(argmin(&[3.0, 1.0, 1.0, 2.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn reflect_negative_branches() {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::from_rows(&[&[1.0, 0.0], &[1.0, 2.0], &[0.5, 0.5]]));
        let k = tape.leaf(Tensor::from_rows(&[&[-1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]]));
        let r = tape.reflect_negative(q, k).unwrap();
        assert_eq!(tape.value(r).data(), &[-1.0, 0.0, 1.0, 2.0, 0.5, 0.5]);
    }

    #[test]
    fn elementwise_and_structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 4, 2);
        let b = random(&mut rng, 4, 2);
        let s = random(&mut rng, 4, 1);
        let bias = random(&mut rng, 1, 2);
        let w = random(&mut rng, 3, 2);
        check_grad(
            vec![a, b, s, bias, w],
            |t, v| {
                let x = t.add(v[0], v[1]).unwrap();
                let y = t.sub(x, v[1]).unwrap();
                let y = t.mul(y, v[1]).unwrap();
                let y = t.mul_col(y, v[2]).unwrap();
                let y = t.add_row(y, v[3]).unwrap();
                let y = t.tanh(y);
                let z = t.sigmoid(v[0]);
                let y = t.concat_cols(&[y, z]).unwrap();
                let y = t.reshape(y, 8, 2).unwrap();
                let y = t.gather_rows(y, &[0, 3, 3, 7, 5]).unwrap();
                let y = t.segment_sum(y, &[0, 2, 2, 1, 0], 3).unwrap();
                let y = t.concat_rows(&[y, v[4]]).unwrap();
                let d = t.rowwise_dot(y, y).unwrap();
                let m = t.mean_rows(y).unwrap();
                let m = t.broadcast_rows(m, 6).unwrap();
                let y = t.block_matmul(v[4], m, 3).unwrap();
                let l = t.log_softmax_rows(y);
                let q = t.scale(l, 0.5);
                let a = t.mean(q);
                let b = t.mean(d);
                let c = t.add(a, b).unwrap();
                t.sum(c)
            },
            1e-6,
        );
    }

    #[test]
    fn reflect_negative_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random(&mut rng, 6, 2);
        let k = random(&mut rng, 6, 2);
        let w = random(&mut rng, 6, 2);
        check_grad(
            vec![q, k],
            |t, v| {
                let r = t.reflect_negative(v[0], v[1]).unwrap();
                let w = t.constant(w.clone());
                let z = t.mul(r, w).unwrap();
                t.sum(z)
            },
            1e-6,
        );
    }

    #[test]
    fn block_matmul_equals_per_block_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random(&mut rng, 3, 4);
        let x = random(&mut rng, 8, 2);
        let mut tape = Tape::new();
        let wv = tape.leaf(w.clone());
        let xv = tape.leaf(x.clone());
        let y = tape.block_matmul(wv, xv, 2).unwrap();
        let out = tape.value(y).clone();
        for b in 0..2 {
            let block = Tensor::new(4, 2, x.data()[b * 8..(b + 1) * 8].to_vec()).unwrap();
            let expect = w.matmul(&block).unwrap();
            assert_eq!(&out.data()[b * 6..(b + 1) * 6], expect.data());
        }
    }

    #[test]
    fn matmul_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let c = random(&mut rng, 4, 2);
        let mut bc = b.clone();
        bc.add_assign(&c);
        let mut lhs2 = a.matmul(&b).unwrap();
        lhs2.add_assign(&a.matmul(&c).unwrap());
        assert!(a.matmul(&bc).unwrap().max_abs_diff(&lhs2) < 1e-12);
    }
}
