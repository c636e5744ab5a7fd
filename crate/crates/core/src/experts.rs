//! Temporal experts: a residual feed-forward block whose output is
//! concatenated with the shift vector and classified.

use rand::Rng;

use crate::error::{MoteError, Result};
use crate::numerics::{softmax, softmax_backward, Matrix, Parameter};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
    /// Classifier over `h ⊕ v`, shape `2d × C`.
    pub wc: Parameter,
    pub bc: Parameter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExpertTrace {
    z: Vec<f64>,
    hidden: Vec<f64>,
    joined: Vec<f64>,
    pub output: ExpertOutput,
}

/// `x · w` for a row vector `x` and matrix parameter `w`, plus bias.
fn row_affine(x: &[f64], w: &Parameter, b: &Parameter) -> Vec<f64> {
    let mut out = b.value.row(0).to_vec();
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(w.value.row(k)) {
            *o += xk * wv;
        }
    }
    out
}

/// Accumulates gradients of `row_affine` and returns `∂L/∂x`.
fn row_affine_backward(x: &[f64], w: &mut Parameter, b: &mut Parameter, d_out: &[f64]) -> Vec<f64> {
    for (g, d) in b.grad.row_mut(0).iter_mut().zip(d_out) {
        *g += d;
    }
    let mut dx = vec![0.0; x.len()];
    for (k, &xk) in x.iter().enumerate() {
        dx[k] = w.value.row(k).iter().zip(d_out).map(|(a, b)| a * b).sum();
        for (g, d) in w.grad.row_mut(k).iter_mut().zip(d_out) {
            *g += xk * d;
        }
    }
    dx
}

impl ExpertParams {
    /// Random block weights and classifier. The second block layer starts at
    /// zero so the block is initially the identity map.
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        ExpertParams {
            w1: Parameter::new(Matrix::xavier(dim, hidden, rng)),
            b1: Parameter::zeros(1, hidden),
            w2: Parameter::zeros(hidden, dim),
            b2: Parameter::zeros(1, dim),
            wc: Parameter::new(Matrix::xavier(2 * dim, classes, rng)),
            bc: Parameter::zeros(1, classes),
        }
    }

    pub fn zeros(dim: usize, hidden: usize, classes: usize) -> Self {
        ExpertParams {
            w1: Parameter::zeros(dim, hidden),
            b1: Parameter::zeros(1, hidden),
            w2: Parameter::zeros(hidden, dim),
            b2: Parameter::zeros(1, dim),
            wc: Parameter::zeros(2 * dim, classes),
            bc: Parameter::zeros(1, classes),
        }
    }

    /// Copies a `d × C` head into the representation half of the classifier.
    pub fn load_head(&mut self, head_w: &Matrix, head_b: &Matrix) -> Result<()> {
        let d = self.dim();
        if head_w.shape() != (d, self.classes()) || head_b.shape() != (1, self.classes()) {
            return Err(MoteError::ShapeMismatch {
                left: "expert classifier",
                left_shape: self.wc.shape(),
                right: "head",
                right_shape: head_w.shape(),
            });
        }
        for k in 0..d {
            self.wc.value.row_mut(k).copy_from_slice(head_w.row(k));
        }
        self.bc.value = head_b.clone();
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.value.cols()
    }

    pub fn classes(&self) -> usize {
        self.wc.value.cols()
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wc,
            &mut self.bc,
        ]
    }

    pub fn params(&self) -> [&Parameter; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.wc, &self.bc]
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn forward(&self, z: &[f64], v: &[f64]) -> Result<ExpertTrace> {
        let d = self.dim();
        if z.len() != d || v.len() != d {
            return Err(MoteError::InvalidArgument(format!(
                "expert expects representation and shift of width {d}, got {} and {}",
                z.len(),
                v.len()
            )));
        }
        if self.wc.value.rows() != 2 * d {
            return Err(MoteError::ShapeMismatch {
                left: "block output ⊕ shift",
                left_shape: (1, 2 * d),
                right: "classifier",
                right_shape: self.wc.shape(),
            });
        }
        let mut hidden = row_affine(z, &self.w1, &self.b1);
        hidden.iter_mut().for_each(|x| *x = x.tanh());
        let block = row_affine(&hidden, &self.w2, &self.b2);
        let mut joined: Vec<f64> = z.iter().zip(&block).map(|(a, b)| a + b).collect();
        joined.extend_from_slice(v);
        let logits = row_affine(&joined, &self.wc, &self.bc);
        let probs = softmax(&logits);
        Ok(ExpertTrace {
            z: z.to_vec(),
            hidden,
            joined,
            output: ExpertOutput { logits, probs },
        })
    }

    /// Accumulates gradients from `∂L/∂probs`; returns `(∂L/∂z, ∂L/∂v)`.
    pub fn backward(&mut self, trace: &ExpertTrace, d_probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let d_logits = softmax_backward(&trace.output.probs, d_probs);
        let d_joined = row_affine_backward(&trace.joined, &mut self.wc, &mut self.bc, &d_logits);
        let (d_h, d_v) = d_joined.split_at(d);
        let d_hidden = row_affine_backward(&trace.hidden, &mut self.w2, &mut self.b2, d_h);
        let d_pre: Vec<f64> = trace
            .hidden
            .iter()
            .zip(&d_hidden)
            .map(|(y, g)| g * (1.0 - y * y))
            .collect();
        let dz_block = row_affine_backward(&trace.z, &mut self.w1, &mut self.b1, &d_pre);
        let dz = d_h.iter().zip(&dz_block).map(|(a, b)| a + b).collect();
        (dz, d_v.to_vec())
    }
}

/// `h = z + W2·tanh(W1·z + b1) + b2`, `p = softmax(Wc·(h ⊕ v) + bc)`.
pub fn expert_forward(z: &[f64], v: &[f64], expert: &ExpertParams) -> Result<ExpertOutput> {
    Ok(expert.forward(z, v)?.output)
}
