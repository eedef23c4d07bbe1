//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A forward pass records every operation on a [`Tape`]; [`Tape::backward`]
//! walks the record in reverse and accumulates adjoints. Parameters are
//! leaves registered by name, which is how gradients are handed back to the
//! optimizer and to the finite-difference checker.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{CsrMatrix, Matrix};
use crate::error::{GeoError, Result};
use crate::manifolds::stereo;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise functions with known derivatives.
///
/// The curvature-dependent entries act on squared norms `s = ‖v‖²` so they
/// stay smooth at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFn {
    Relu,
    Tanh,
    Sigmoid,
    Ln,
    /// `ln(x + 1e-12)`
    LnEps,
    Square,
    Sqrt,
    /// `max(√x, 1e-12)`
    SafeNorm,
    Exp,
    Softplus,
    /// `tan_κ(√(|κ|s)) / √(|κ|s)`
    TanC(f64),
    /// `tan_κ⁻¹(√(|κ|s)) / √(|κ|s)`
    ArTanC(f64),
    /// Squared geodesic length from the origin as a function of `s`.
    DistSq(f64),
}

pub const LN_EPS: f64 = 1e-12;
const NORM_FLOOR: f64 = 1e-12;

impl ScalarFn {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ScalarFn::Relu => x.max(0.0),
            ScalarFn::Tanh => x.tanh(),
            ScalarFn::Sigmoid => sigmoid(x),
            ScalarFn::Ln => x.ln(),
            ScalarFn::LnEps => (x + LN_EPS).ln(),
            ScalarFn::Square => x * x,
            ScalarFn::Sqrt => x.sqrt(),
            ScalarFn::SafeNorm => x.max(0.0).sqrt().max(NORM_FLOOR),
            ScalarFn::Exp => x.exp(),
            ScalarFn::Softplus => softplus(x),
            ScalarFn::TanC(k) => stereo::tanc(k, x).0,
            ScalarFn::ArTanC(k) => stereo::artanc(k, x).0,
            ScalarFn::DistSq(k) => stereo::dist_sq_from_origin(k, x).0,
        }
    }

    /// Derivative at `x`, given the already computed output `y`.
    pub fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            ScalarFn::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarFn::Tanh => 1.0 - y * y,
            ScalarFn::Sigmoid => y * (1.0 - y),
            ScalarFn::Ln => 1.0 / x,
            ScalarFn::LnEps => 1.0 / (x + LN_EPS),
            ScalarFn::Square => 2.0 * x,
            ScalarFn::Sqrt => 0.5 / y,
            ScalarFn::SafeNorm => {
                if y > NORM_FLOOR {
                    0.5 / y
                } else {
                    0.0
                }
            }
            ScalarFn::Exp => y,
            ScalarFn::Softplus => sigmoid(x),
            ScalarFn::TanC(k) => stereo::tanc(k, x).1,
            ScalarFn::ArTanC(k) => stereo::artanc(k, x).1,
            ScalarFn::DistSq(k) => stereo::dist_sq_from_origin(k, x).1,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Map(Var, ScalarFn),
    Transpose(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Sum(Var),
    RowSum(Var),
    ColSum(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Col(Var, usize),
    ClipRowNorm(Var, f64),
    StraightThrough(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "sparse matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Hadamard(..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Map(_, f) => match f {
                ScalarFn::Relu => "relu",
                ScalarFn::Tanh => "tanh",
                ScalarFn::Sigmoid => "sigmoid",
                ScalarFn::Ln | ScalarFn::LnEps => "log",
                ScalarFn::Square => "square",
                ScalarFn::Sqrt | ScalarFn::SafeNorm => "sqrt",
                ScalarFn::Exp => "exp",
                ScalarFn::Softplus => "softplus",
                ScalarFn::TanC(_) => "exp0 scaling",
                ScalarFn::ArTanC(_) => "log0 scaling",
                ScalarFn::DistSq(_) => "squared distance",
            },
            Op::Transpose(..) => "transpose",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::DivCol(..) => "div_col",
            Op::Sum(..) => "sum",
            Op::RowSum(..) => "row_sum",
            Op::ColSum(..) => "col_sum",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::SelectRows(..) => "select_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Col(..) => "col",
            Op::ClipRowNorm(..) => "clip_row_norm",
            Op::StraightThrough(..) => "straight_through",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
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

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(GeoError::NonFinite(op.name().to_string()));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::DivCol(a, b) => self.needs(*a) || self.needs(*b),
            Op::SpMM(_, a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Map(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::RowSum(a)
            | Op::ColSum(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::SelectRows(a, _)
            | Op::Col(a, _)
            | Op::ClipRowNorm(a, _)
            | Op::StraightThrough(a) => self.needs(*a),
            Op::ConcatCols(parts) => parts.iter().any(|p| self.needs(*p)),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a named trainable leaf.
    pub fn param(&mut self, name: &str, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    /// Sparse constant times a recorded dense value.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix>, h: Var) -> Result<Var> {
        let value = s.mul_dense(self.value(h))?;
        self.push(value, Op::SpMM(Arc::clone(s), h))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(value, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        self.push(value, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v + s);
        self.push(value, Op::AddScalar(a))
    }

    pub fn map(&mut self, a: Var, f: ScalarFn) -> Result<Var> {
        let value = self.value(a).map(|v| f.eval(v));
        self.push(value, Op::Map(a, f))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, ScalarFn::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, ScalarFn::Tanh)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(GeoError::Dimension(format!(
                "add_row: {ar}x{ac} + {rr}x{rc}"
            )));
        }
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..ar {
            for (v, x) in value.row_mut(i).iter_mut().zip(&r) {
                *v += x;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    fn check_col(&self, a: Var, col: Var, what: &str) -> Result<()> {
        let (ar, ac) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cc != 1 || cr != ar {
            return Err(GeoError::Dimension(format!(
                "{what}: {ar}x{ac} with column {cr}x{cc}"
            )));
        }
        Ok(())
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.check_col(a, col, "mul_col")?;
        let c = self.value(col).data().to_vec();
        let mut value = self.value(a).clone();
        for (i, s) in c.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        self.push(value, Op::MulCol(a, col))
    }

    /// Divides row `i` of `a` by `col[i]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.check_col(a, col, "div_col")?;
        let c = self.value(col).data().to_vec();
        let mut value = self.value(a).clone();
        for (i, s) in c.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        self.push(value, Op::DivCol(a, col))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// `n×c → n×1`
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let sums: Vec<f64> = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        self.push(Matrix::column(&sums), Op::RowSum(a))
    }

    /// `n×c → 1×c`
    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut sums = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (s, v) in sums.iter_mut().zip(m.row(r)) {
                *s += v;
            }
        }
        self.push(Matrix::row_vector(&sums), Op::ColSum(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = super::softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(value, Op::LogSoftmaxRows(a))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let n = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(GeoError::Dimension(format!(
                "select_rows: index {bad} out of {n} rows"
            )));
        }
        let value = self.value(a).select_rows(idx);
        self.push(value, Op::SelectRows(a, idx.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|p| self.shape(*p).0)
            .ok_or_else(|| GeoError::Dimension("concat_cols of nothing".into()))?;
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(GeoError::Dimension("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                value.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Column `j` as an `n×1` matrix.
    pub fn col(&mut self, a: Var, j: usize) -> Result<Var> {
        let m = self.value(a);
        if j >= m.cols() {
            return Err(GeoError::Dimension(format!(
                "col {j} of {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let values: Vec<f64> = (0..m.rows()).map(|r| m.get(r, j)).collect();
        self.push(Matrix::column(&values), Op::Col(a, j))
    }

    /// Rescales rows whose Euclidean norm exceeds `max_norm` onto that radius.
    pub fn clip_row_norm(&mut self, a: Var, max_norm: f64) -> Result<Var> {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > max_norm {
                row.iter_mut().for_each(|v| *v *= max_norm / n);
            }
        }
        self.push(value, Op::ClipRowNorm(a, max_norm))
    }

    /// Replaces the value of `a` while passing gradients through unchanged.
    pub fn straight_through(&mut self, a: Var, value: Matrix) -> Result<Var> {
        if value.shape() != self.shape(a) {
            return Err(GeoError::Dimension(
                "straight_through replacement changes the shape".into(),
            ));
        }
        self.push(value, Op::StraightThrough(a))
    }

    // Composites.

    pub fn row_sum_sq(&mut self, a: Var) -> Result<Var> {
        let sq = self.map(a, ScalarFn::Square)?;
        self.row_sum(sq)
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let h = self.hadamard(a, b)?;
        self.row_sum(h)
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Result<Var> {
        let sq = self.map(a, ScalarFn::Square)?;
        self.sum(sq)
    }

    /// Repeats a `1×c` row `n` times.
    pub fn broadcast_row(&mut self, row: Var, n: usize) -> Result<Var> {
        let ones = self.constant(Matrix::filled(n, 1, 1.0));
        self.matmul(ones, row)
    }

    /// Reverse sweep from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(GeoError::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut leaf_grads: BTreeMap<usize, Matrix> = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                leaf_grads.insert(idx, g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }

        let params = self
            .params
            .iter()
            .map(|(name, v)| (name.clone(), leaf_grads.remove(&v.0)))
            .collect();
        Ok(Gradients {
            params,
            shapes: self
                .params
                .iter()
                .map(|(name, v)| (name.clone(), self.shape(*v)))
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], target: Var, g: Matrix) -> Result<()> {
        if !self.needs(target) {
            return Ok(());
        }
        match &mut grads[target.0] {
            Some(existing) => existing.axpy(1.0, &g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = g.matmul_nt(self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.needs(*b) {
                    let gb = self.value(*a).matmul_tn(g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::SpMM(s, h) => {
                let gh = s.transpose_mul_dense(g)?;
                self.accumulate(grads, *h, gh)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Hadamard(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s))?,
            Op::AddScalar(a) | Op::StraightThrough(a) => self.accumulate(grads, *a, g.clone())?,
            Op::Map(a, f) => {
                let x = self.value(*a);
                let mut ga = g.clone();
                for ((gv, &xv), &yv) in ga.data_mut().iter_mut().zip(x.data()).zip(out.data()) {
                    *gv *= f.deriv(xv, yv);
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose())?,
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.needs(*row) {
                    self.accumulate(grads, *row, column_sums(g))?;
                }
            }
            Op::MulCol(a, col) => {
                let c = self.value(*col);
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = c.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    self.accumulate(grads, *a, ga)?;
                }
                if self.needs(*col) {
                    let av = self.value(*a);
                    let gc: Vec<f64> = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, *col, Matrix::column(&gc))?;
                }
            }
            Op::DivCol(a, col) => {
                let c = self.value(*col);
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = c.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|v| *v /= s);
                    }
                    self.accumulate(grads, *a, ga)?;
                }
                if self.needs(*col) {
                    // d(a/c)/dc = -(a/c)/c = -out/c
                    let gc: Vec<f64> = (0..g.rows())
                        .map(|r| {
                            let dot: f64 =
                                g.row(r).iter().zip(out.row(r)).map(|(x, y)| x * y).sum();
                            -dot / c.get(r, 0)
                        })
                        .collect();
                    self.accumulate(grads, *col, Matrix::column(&gc))?;
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(r, c, g.get(0, 0)))?;
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    let s = g.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|v| *v = s);
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::ColSum(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i).copy_from_slice(g.row(0));
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    let y = out.row(r);
                    let dot: f64 = g.row(r).iter().zip(y).map(|(x, y)| x * y).sum();
                    for (gv, &yv) in ga.row_mut(r).iter_mut().zip(y) {
                        *gv = yv * (*gv - dot);
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (gv, &yv) in ga.row_mut(r).iter_mut().zip(out.row(r)) {
                        *gv -= yv.exp() * total;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::SelectRows(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for (i, &src) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.needs(*p) {
                        let mut gp = Matrix::zeros(r, c);
                        for i in 0..r {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        self.accumulate(grads, *p, gp)?;
                    }
                    off += c;
                }
            }
            Op::Col(a, j) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    ga.set(i, *j, g.get(i, 0));
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::ClipRowNorm(a, max_norm) => {
                let x = self.value(*a);
                let mut ga = g.clone();
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > *max_norm {
                        // J = (c/n)(I − r̂r̂ᵀ)
                        let dot: f64 =
                            g.row(r).iter().zip(row).map(|(a, b)| a * b).sum::<f64>() / n;
                        for (gv, &xv) in ga.row_mut(r).iter_mut().zip(row) {
                            *gv = max_norm / n * (*gv - dot * xv / n);
                        }
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
        }
        Ok(())
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut sums = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (s, v) in sums.iter_mut().zip(g.row(r)) {
            *s += v;
        }
    }
    Matrix::row_vector(&sums)
}

/// Gradients of a scalar loss keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<(String, Option<Matrix>)>,
    shapes: Vec<(String, (usize, usize))>,
}

impl Gradients {
    /// `None` when no differentiable path connects the parameter to the loss.
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, g)| g.as_ref())
    }

    pub fn reached(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// All parameter gradients, zero-filled where no path exists.
    pub fn into_map(self) -> BTreeMap<String, Matrix> {
        let shapes: BTreeMap<_, _> = self.shapes.into_iter().collect();
        self.params
            .into_iter()
            .map(|(name, g)| {
                let g = g.unwrap_or_else(|| {
                    let (r, c) = shapes[&name];
                    Matrix::zeros(r, c)
                });
                (name, g)
            })
            .collect()
    }
}
