//! Dense row-major matrices, differentiable layer kernels, AdamW, and a
//! central-difference gradient checker.
//!
//! Every trainable component is built from [`Parameter`]s. Forward kernels
//! are pure; backward kernels accumulate into `Parameter::grad` and return
//! the gradient with respect to their input.

use rand::Rng;

use crate::error::{MoteError, Result};

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MoteError::InvalidArgument(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(MoteError::InvalidArgument(format!(
                    "row {i} has width {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single-row matrix.
    pub fn row_vector(v: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    /// Uniform Xavier/Glorot initialization.
    pub fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Matrix::uniform(rows, cols, bound, rng)
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_shape(self.cols == other.rows, "lhs", self, "rhs", other)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_shape(self.rows == other.rows, "lhs", self, "rhs", other)?;
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        check_shape(self.cols == other.cols, "lhs", self, "rhs", other)?;
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        check_shape(self.shape() == other.shape(), "lhs", self, "rhs", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

fn check_shape(
    ok: bool,
    left: &'static str,
    l: &Matrix,
    right: &'static str,
    r: &Matrix,
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(MoteError::ShapeMismatch {
            left,
            left_shape: l.shape(),
            right,
            right_shape: r.shape(),
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Matrix,
    pub grad: Matrix,
    first_moment: Matrix,
    second_moment: Matrix,
    step: u64,
}

impl Parameter {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Parameter {
            value,
            grad: Matrix::zeros(r, c),
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
            step: 0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Parameter::new(Matrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Drops optimizer state, keeping the value.
    pub fn reset_optimizer(&mut self) {
        self.first_moment.fill(0.0);
        self.second_moment.fill(0.0);
        self.step = 0;
        self.zero_grad();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        OptimizerConfig {
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(MoteError::InvalidArgument(format!(
                "invalid optimizer config {self:?}"
            )))
        }
    }
}

/// One AdamW update: bias-corrected moments, then decoupled weight decay.
pub fn adamw_step(param: &mut Parameter, cfg: &OptimizerConfig) {
    param.step += 1;
    let t = param.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = cfg.learning_rate * cfg.weight_decay;
    let values = param.value.data.iter_mut();
    let grads = param.grad.data.iter();
    let m = param.first_moment.data.iter_mut();
    let v = param.second_moment.data.iter_mut();
    for (((w, &g), m), v) in values.zip(grads).zip(m).zip(v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        *w -= decay * *w;
    }
}

/// `x · w + b`, with `b` broadcast over rows.
pub fn affine_forward(x: &Matrix, w: &Parameter, b: &Parameter) -> Result<Matrix> {
    if x.cols != w.value.rows {
        return Err(MoteError::ShapeMismatch {
            left: "input",
            left_shape: x.shape(),
            right: "weight",
            right_shape: w.shape(),
        });
    }
    if b.value.rows != 1 || b.value.cols != w.value.cols {
        return Err(MoteError::ShapeMismatch {
            left: "weight",
            left_shape: w.shape(),
            right: "bias",
            right_shape: b.shape(),
        });
    }
    let mut out = x.matmul(&w.value)?;
    let bias = b.value.row(0);
    for r in 0..out.rows {
        for (o, &bb) in out.row_mut(r).iter_mut().zip(bias) {
            *o += bb;
        }
    }
    Ok(out)
}

/// Accumulates `∂L/∂w` and `∂L/∂b` from `d_out` and returns `∂L/∂x`.
pub fn affine_backward(
    x: &Matrix,
    w: &mut Parameter,
    b: &mut Parameter,
    d_out: &Matrix,
) -> Result<Matrix> {
    let dw = x.t_matmul(d_out)?;
    w.grad.add_assign(&dw)?;
    for r in 0..d_out.rows {
        for (g, &d) in b.grad.data.iter_mut().zip(d_out.row(r)) {
            *g += d;
        }
    }
    d_out.matmul_t(&w.value)
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
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

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Vector-Jacobian product of softmax: given `p = softmax(a)` and `∂L/∂p`,
/// returns `∂L/∂a`.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let inner = dot(probs, d_probs);
    probs
        .iter()
        .zip(d_probs)
        .map(|(p, d)| p * (d - inner))
        .collect()
}

/// Mean over the batch of `-ln(max(p[true], 1e-12))`.
pub fn cross_entropy(probs: &Matrix, targets: &[usize]) -> Result<f64> {
    if probs.rows != targets.len() {
        return Err(MoteError::InvalidArgument(format!(
            "{} prediction rows but {} targets",
            probs.rows,
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(MoteError::Empty("cross-entropy batch".into()));
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= probs.cols {
            return Err(MoteError::IndexOutOfRange {
                what: "class",
                index: t,
                len: probs.cols,
            });
        }
        total -= probs[(r, t)].max(PROB_FLOOR).ln();
    }
    Ok(total / targets.len() as f64)
}

pub fn tanh_in_place(m: &mut Matrix) {
    m.data.iter_mut().for_each(|x| *x = x.tanh());
}

/// Given `y = tanh(a)` and `∂L/∂y`, returns `∂L/∂a`.
pub fn tanh_backward(y: &Matrix, d_y: &Matrix) -> Matrix {
    let data = y
        .data
        .iter()
        .zip(&d_y.data)
        .map(|(y, d)| d * (1.0 - y * y))
        .collect();
    Matrix {
        rows: y.rows,
        cols: y.cols,
        data,
    }
}

/// Compares `param.grad` (analytic) with central differences of `loss`.
///
/// Returns `max |analytic - numeric| / max(1, |analytic|)` over all entries.
/// `param.value` is restored before returning.
pub fn finite_diff_check<F>(param: &mut Parameter, h: f64, mut loss: F) -> f64
where
    F: FnMut(&Parameter) -> f64,
{
    let mut worst: f64 = 0.0;
    for i in 0..param.value.data.len() {
        let orig = param.value.data[i];
        param.value.data[i] = orig + h;
        let up = loss(param);
        param.value.data[i] = orig - h;
        let down = loss(param);
        param.value.data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = param.grad.data[i];
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
