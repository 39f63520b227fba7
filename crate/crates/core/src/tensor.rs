//! Dense row-major matrices and a reverse-mode autodiff tape.
//!
//! Every value is a 2-D [`Tensor`]; vectors are `1×n` rows and scalars are
//! `1×1`. Batched computations put one sample per row. Graph operations
//! are recorded on a [`Tape`] and addressed by [`Var`] handles, and
//! [`Tape::backward`] runs a single reverse sweep.
//!
//! Activation functions are exposed twice: as a value op and as a
//! first-derivative op ([`Tape::activation_deriv`]). The derivative op is
//! itself differentiable (through the analytic second derivative), which lets
//! callers assemble input gradients such as `∇ₕV` by hand and still obtain
//! parameter gradients from one first-order backward pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// A `1×n` row vector.
    pub fn row(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// Stacks equally long rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: (1, cols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Value of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sum over rows, producing `1×cols`.
    fn column_sums(&self) -> Tensor {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row_slice(i)) {
                *o += v;
            }
        }
        Tensor {
            rows: 1,
            cols: self.cols,
            data: out,
        }
    }
}

/// Elementwise nonlinearities. Each kind has closed-form first and second
/// derivatives; kinks take the right derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x²` for `x ≥ 0`, else 0.
    ReQU,
    /// `ReQU(x) − ReQU(x − 0.5)`: quadratic on `[0, 0.5]`, linear beyond.
    ReQUr,
    Tanh,
    Sigmoid,
    Softplus,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn requ(x: f64) -> f64 {
    if x >= 0.0 {
        x * x
    } else {
        0.0
    }
}

fn requ_d(x: f64) -> f64 {
    if x >= 0.0 {
        2.0 * x
    } else {
        0.0
    }
}

fn requ_dd(x: f64) -> f64 {
    if x >= 0.0 {
        2.0
    } else {
        0.0
    }
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::ReQU,
        Activation::ReQUr,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
    ];

    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::ReQU => requ(x),
            Activation::ReQUr => requ(x) - requ(x - 0.5),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::ReQU => requ_d(x),
            Activation::ReQUr => requ_d(x) - requ_d(x - 0.5),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::ReQU => requ_dd(x),
            Activation::ReQUr => requ_dd(x) - requ_dd(x - 0.5),
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "requ" => Ok(Activation::ReQU),
            "requr" => Ok(Activation::ReQUr),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softplus" => Ok(Activation::Softplus),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    Param,
    Input,
    Constant,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(LeafKind),
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a[B×n] + row[1×n]` on every row.
    AddRow(usize, usize),
    /// `a[B×n] ⊙ row[1×n]` on every row.
    MulRow(usize, usize),
    /// `a[B×n] ⊙ col[B×1]` on every column.
    MulCol(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Act(usize, Activation),
    ActDeriv(usize, Activation),
    Abs(usize),
    Relu(usize),
    Sum(usize),
    RowSumSq(usize),
    /// Per-row `y_b = A_b x_b` (or `A_bᵀ x_b`), with `A_b` the row-major
    /// `m×m` matrix stored in row `b` of the left operand.
    BatchMatVec {
        mat: usize,
        vec: usize,
        transpose: bool,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only computation graph. Parents always precede children.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros of the given shape when independent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn isqrt_exact(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    pub fn leaf(&mut self, value: Tensor, kind: LeafKind) -> Var {
        self.push(Op::Leaf(kind), value)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, LeafKind::Param)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, LeafKind::Input)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, LeafKind::Constant)
    }

    /// Leaf kind of `v`, or `None` for interior nodes.
    pub fn leaf_kind(&self, v: Var) -> Option<LeafKind> {
        match self.nodes.get(v.0)?.op {
            Op::Leaf(kind) => Some(kind),
            _ => None,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a.0, b.0), value))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        let value = self.value(a).transpose();
        Ok(self.push(Op::Transpose(a.0), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        check_same("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a.0, b.0), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        check_same("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a.0, b.0), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        check_same("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a.0, b.0), value))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(row)?;
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows != 1 || rv.cols != av.cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: av.shape(),
                right: rv.shape(),
            });
        }
        let mut value = av.clone();
        for i in 0..value.rows {
            let cols = value.cols;
            for (x, r) in value.data[i * cols..(i + 1) * cols].iter_mut().zip(&rv.data) {
                *x += r;
            }
        }
        Ok(self.push(Op::AddRow(a.0, row.0), value))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(row)?;
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows != 1 || rv.cols != av.cols {
            return Err(TensorError::ShapeMismatch {
                op: "mul_row",
                left: av.shape(),
                right: rv.shape(),
            });
        }
        let mut value = av.clone();
        for i in 0..value.rows {
            let cols = value.cols;
            for (x, r) in value.data[i * cols..(i + 1) * cols].iter_mut().zip(&rv.data) {
                *x *= r;
            }
        }
        Ok(self.push(Op::MulRow(a.0, row.0), value))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(col)?;
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols != 1 || cv.rows != av.rows {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                left: av.shape(),
                right: cv.shape(),
            });
        }
        let mut value = av.clone();
        let cols = value.cols;
        for i in 0..value.rows {
            let c = cv.data[i];
            for x in &mut value.data[i * cols..(i + 1) * cols] {
                *x *= c;
            }
        }
        Ok(self.push(Op::MulCol(a.0, col.0), value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.check(a)?;
        let value = self.value(a).map(|x| c * x);
        Ok(self.push(Op::Scale(a.0, c), value))
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.check(a)?;
        let value = self.value(a).map(|x| x + c);
        Ok(self.push(Op::Shift(a.0), value))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var, TensorError> {
        self.check(a)?;
        let value = self.value(a).map(|x| act.value(x));
        Ok(self.push(Op::Act(a.0, act), value))
    }

    /// Elementwise `σ'(a)`, differentiable through `σ''`.
    pub fn activation_deriv(&mut self, a: Var, act: Activation) -> Result<Var, TensorError> {
        self.check(a)?;
        let value = self.value(a).map(|x| act.derivative(x));
        Ok(self.push(Op::ActDeriv(a.0, act), value))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        let value = self.value(a).map(f64::abs);
        Ok(self.push(Op::Abs(a.0), value))
    }

    /// Positive part `max(a, 0)`.
    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        let value = self.value(a).map(|x| x.max(0.0));
        Ok(self.push(Op::Relu(a.0), value))
    }

    /// Sum of all entries, `1×1`.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        Ok(self.push(Op::Sum(a.0), value))
    }

    /// Mean of all entries, `1×1`.
    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Squared Euclidean norm of each row, `B×1`.
    pub fn row_sum_sq(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        let av = self.value(a);
        let data = (0..av.rows)
            .map(|i| av.row_slice(i).iter().map(|x| x * x).sum())
            .collect();
        let value = Tensor {
            rows: av.rows,
            cols: 1,
            data,
        };
        Ok(self.push(Op::RowSumSq(a.0), value))
    }

    /// Batched matrix-vector product: row `b` of `mat` holds a row-major
    /// `m×m` matrix `A_b`; returns rows `A_b x_b` (or `A_bᵀ x_b`).
    pub fn batch_matvec(&mut self, mat: Var, vec: Var, transpose: bool) -> Result<Var, TensorError> {
        self.check(mat)?;
        self.check(vec)?;
        let (mv, xv) = (self.value(mat), self.value(vec));
        let m = xv.cols;
        if mv.rows != xv.rows || mv.cols != m * m {
            return Err(TensorError::ShapeMismatch {
                op: "batch_matvec",
                left: mv.shape(),
                right: xv.shape(),
            });
        }
        let mut out = vec![0.0; xv.rows * m];
        for b in 0..xv.rows {
            let a = mv.row_slice(b);
            let x = xv.row_slice(b);
            let y = &mut out[b * m..(b + 1) * m];
            for i in 0..m {
                for j in 0..m {
                    if transpose {
                        y[j] += a[i * m + j] * x[i];
                    } else {
                        y[i] += a[i * m + j] * x[j];
                    }
                }
            }
        }
        let value = Tensor {
            rows: xv.rows,
            cols: m,
            data: out,
        };
        Ok(self.push(
            Op::BatchMatVec {
                mat: mat.0,
                vec: vec.0,
                transpose,
            },
            value,
        ))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        self.check(root)?;
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
            match &mut grads[idx] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf(_) => {}
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    // dA = G Bᵀ, dB = Aᵀ G
                    let ga = g.matmul(&bv.transpose()).expect("matmul grad shape");
                    let gb = av.transpose().matmul(&g).expect("matmul grad shape");
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_with(&self.nodes[b].value, |x, y| x * y);
                    let gb = g.zip_with(&self.nodes[a].value, |x, y| x * y);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, row, g.column_sums());
                    acc(&mut grads, a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let av = &self.nodes[a].value;
                    let rv = &self.nodes[row].value;
                    let mut ga = g.clone();
                    let mut gr = vec![0.0; rv.cols];
                    for i in 0..g.rows {
                        let off = i * g.cols;
                        for j in 0..g.cols {
                            gr[j] += g.data[off + j] * av.data[off + j];
                            ga.data[off + j] *= rv.data[j];
                        }
                    }
                    acc(&mut grads, a, ga);
                    acc(&mut grads, row, Tensor::new(1, rv.cols, gr).expect("row grad"));
                }
                Op::MulCol(a, col) => {
                    let av = &self.nodes[a].value;
                    let cv = &self.nodes[col].value;
                    let mut ga = g.clone();
                    let mut gc = vec![0.0; cv.rows];
                    for i in 0..g.rows {
                        let off = i * g.cols;
                        for j in 0..g.cols {
                            gc[i] += g.data[off + j] * av.data[off + j];
                            ga.data[off + j] *= cv.data[i];
                        }
                    }
                    acc(&mut grads, a, ga);
                    acc(&mut grads, col, Tensor::new(cv.rows, 1, gc).expect("col grad"));
                }
                Op::Scale(a, c) => acc(&mut grads, a, g.map(|x| c * x)),
                Op::Shift(a) => acc(&mut grads, a, g.clone()),
                Op::Act(a, act) => {
                    let ga = g.zip_with(&self.nodes[a].value, |x, z| x * act.derivative(z));
                    acc(&mut grads, a, ga);
                }
                Op::ActDeriv(a, act) => {
                    let ga = g.zip_with(&self.nodes[a].value, |x, z| x * act.second_derivative(z));
                    acc(&mut grads, a, ga);
                }
                Op::Abs(a) => {
                    // sign(0) = 0
                    let ga = g.zip_with(&self.nodes[a].value, |x, z| {
                        if z > 0.0 {
                            x
                        } else if z < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_with(&self.nodes[a].value, |x, z| if z > 0.0 { x } else { 0.0 });
                    acc(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a].value.shape();
                    acc(&mut grads, a, Tensor::filled(r, c, g.data[0]));
                }
                Op::RowSumSq(a) => {
                    let av = &self.nodes[a].value;
                    let mut ga = av.map(|x| 2.0 * x);
                    for i in 0..av.rows {
                        let gi = g.data[i];
                        for x in &mut ga.data[i * av.cols..(i + 1) * av.cols] {
                            *x *= gi;
                        }
                    }
                    acc(&mut grads, a, ga);
                }
                Op::BatchMatVec { mat, vec, transpose } => {
                    let mv = &self.nodes[mat].value;
                    let xv = &self.nodes[vec].value;
                    let m = xv.cols;
                    let mut gm = Tensor::zeros(mv.rows, mv.cols);
                    let mut gx = Tensor::zeros(xv.rows, m);
                    for b in 0..xv.rows {
                        let a = mv.row_slice(b);
                        let x = xv.row_slice(b);
                        let gy = g.row_slice(b);
                        let gmr = &mut gm.data[b * m * m..(b + 1) * m * m];
                        let gxr = &mut gx.data[b * m..(b + 1) * m];
                        for i in 0..m {
                            for j in 0..m {
                                if transpose {
                                    // y_j = Σ_i a_ij x_i
                                    gmr[i * m + j] += x[i] * gy[j];
                                    gxr[i] += a[i * m + j] * gy[j];
                                } else {
                                    // y_i = Σ_j a_ij x_j
                                    gmr[i * m + j] += gy[i] * x[j];
                                    gxr[j] += a[i * m + j] * gy[i];
                                }
                            }
                        }
                    }
                    acc(&mut grads, mat, gm);
                    acc(&mut grads, vec, gx);
                }
            }
            // leaves keep their gradient
            if matches!(node.op, Op::Leaf(_)) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Splits the row-major `m×m` matrix in each batch row into its lower
/// triangle (diagonal included) and its strict upper triangle.
pub fn triangle_masks(m: usize) -> (Tensor, Tensor) {
    let lower = Tensor::from_fn(1, m * m, |_, k| if k % m <= k / m { 1.0 } else { 0.0 });
    let upper = Tensor::from_fn(1, m * m, |_, k| if k % m > k / m { 1.0 } else { 0.0 });
    (lower, upper)
}

/// Side length of a flattened square matrix, if the length is a square.
pub fn square_side(len: usize) -> Option<usize> {
    isqrt_exact(len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let id = Tensor::identity(2);
        let v = Tensor::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert_eq!(id.matmul(&v).unwrap(), v);
        let a = Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 3);
        let b = random(&mut rng, 3, 3);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(2, 3));
        let b = tape.input(Tensor::zeros(2, 3));
        assert!(matches!(
            tape.matmul(a, b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::ReQU.value(2.0), 4.0);
        assert_eq!(Activation::ReQU.value(-1.0), 0.0);
        assert_eq!(Activation::ReQUr.value(2.0), 1.75);
        assert!((Activation::Softplus.value(0.0) - 2f64.ln()).abs() < 1e-15);
        // right derivatives at the kinks
        assert_eq!(Activation::ReQU.second_derivative(0.0), 2.0);
        assert_eq!(Activation::ReQUr.second_derivative(0.5), 0.0);
        assert_eq!(Activation::ReQUr.derivative(3.0), 1.0);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        let sq = tape.row_sum_sq(x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requ_chain_rule() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(1.5));
        let x = tape.input(Tensor::scalar(2.0));
        let wx = tape.mul(w, x).unwrap();
        let y = tape.activation(wx, Activation::ReQU).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 12.0);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        assert_eq!(tape.backward(x).err(), Some(TensorError::NonScalarRoot((1, 2))));
    }

    #[test]
    fn activation_deriv_op_matches_backward_pointwise() {
        let xs = [-1.3, -0.2, 0.1, 0.3, 0.7, 2.0];
        for act in Activation::ALL {
            let mut tape = Tape::new();
            let x = tape.param(Tensor::row(&xs));
            let d = tape.activation_deriv(x, act).unwrap();
            let y = tape.activation(x, act).unwrap();
            let s = tape.sum(y).unwrap();
            let g = tape.backward(s).unwrap();
            assert_eq!(tape.value(d), g.get(x).unwrap(), "{act:?}");
        }
    }

    #[test]
    fn triangle_masks_partition() {
        let (lo, up) = triangle_masks(3);
        assert_eq!(lo.data(), &[1., 0., 0., 1., 1., 0., 1., 1., 1.]);
        assert_eq!(up.data(), &[0., 1., 1., 0., 0., 1., 0., 0., 0.]);
    }
}
