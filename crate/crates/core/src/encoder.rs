//! Hashed bag-of-words encoder: mean-pooled bucket embeddings followed by
//! an affine projection and `tanh`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::corpus::Document;
use crate::error::{MoteError, Result};
use crate::numerics::{Matrix, Parameter};
use crate::rng::fnv1a64;

/// A document's semantic representation `z`.
pub type Representation = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Tanh,
    Identity,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative expressed through the output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => 1.0 - y * y,
            Nonlinearity::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Nonlinearity::Tanh),
            "identity" => Some(Nonlinearity::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embedding: Parameter,
    pub projection: Parameter,
    pub bias: Parameter,
    pub nonlinearity: Nonlinearity,
}

/// Bucket index of a token: FNV-1a 64 of its UTF-8 bytes, modulo `buckets`.
pub fn hash_token(token: &str, buckets: usize) -> Result<usize> {
    if token.is_empty() {
        return Err(MoteError::InvalidArgument("cannot hash an empty token".into()));
    }
    if buckets == 0 {
        return Err(MoteError::InvalidArgument("bucket count must be positive".into()));
    }
    Ok((fnv1a64(token.as_bytes()) % buckets as u64) as usize)
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    buckets: Vec<usize>,
    pooled: Vec<f64>,
    pub output: Representation,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(buckets: usize, emb_dim: usize, dim: usize, rng: &mut R) -> Self {
        EncoderParams {
            embedding: Parameter::new(Matrix::uniform(buckets, emb_dim, 0.5, rng)),
            projection: Parameter::new(Matrix::xavier(emb_dim, dim, rng)),
            bias: Parameter::zeros(1, dim),
            nonlinearity: Nonlinearity::Tanh,
        }
    }

    pub fn zeros(buckets: usize, emb_dim: usize, dim: usize) -> Self {
        EncoderParams {
            embedding: Parameter::zeros(buckets, emb_dim),
            projection: Parameter::zeros(emb_dim, dim),
            bias: Parameter::zeros(1, dim),
            nonlinearity: Nonlinearity::Tanh,
        }
    }

    pub fn buckets(&self) -> usize {
        self.embedding.value.rows()
    }

    pub fn emb_dim(&self) -> usize {
        self.embedding.value.cols()
    }

    pub fn dim(&self) -> usize {
        self.projection.value.cols()
    }

    pub fn bucketize(&self, doc: &Document) -> Result<Vec<usize>> {
        if doc.tokens.is_empty() {
            return Err(MoteError::Empty(format!("document {} has no tokens", doc.id)));
        }
        // Sorted so pooling sums in a fixed order regardless of token order.
        let mut ids = doc
            .tokens
            .iter()
            .map(|t| hash_token(t, self.buckets()))
            .collect::<Result<Vec<usize>>>()?;
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn forward_buckets(&self, buckets: &[usize]) -> EncoderTrace {
        let emb_dim = self.emb_dim();
        let mut pooled = vec![0.0; emb_dim];
        for &b in buckets {
            for (p, e) in pooled.iter_mut().zip(self.embedding.value.row(b)) {
                *p += e;
            }
        }
        let inv = 1.0 / buckets.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);

        let mut output = self.bias.value.row(0).to_vec();
        for (k, &p) in pooled.iter().enumerate() {
            for (o, w) in output.iter_mut().zip(self.projection.value.row(k)) {
                *o += p * w;
            }
        }
        output
            .iter_mut()
            .for_each(|o| *o = self.nonlinearity.apply(*o));
        EncoderTrace {
            buckets: buckets.to_vec(),
            pooled,
            output,
        }
    }

    pub fn forward(&self, doc: &Document) -> Result<EncoderTrace> {
        Ok(self.forward_buckets(&self.bucketize(doc)?))
    }

    /// Accumulates parameter gradients given `∂L/∂z`.
    pub fn backward(&mut self, trace: &EncoderTrace, d_out: &[f64]) {
        let d_pre: Vec<f64> = trace
            .output
            .iter()
            .zip(d_out)
            .map(|(&y, &d)| d * self.nonlinearity.derivative_from_output(y))
            .collect();
        for (g, d) in self.bias.grad.row_mut(0).iter_mut().zip(&d_pre) {
            *g += d;
        }
        let mut d_pooled = vec![0.0; self.emb_dim()];
        for (k, &p) in trace.pooled.iter().enumerate() {
            let w_row = self.projection.value.row(k);
            d_pooled[k] = w_row.iter().zip(&d_pre).map(|(w, d)| w * d).sum();
            for (g, d) in self.projection.grad.row_mut(k).iter_mut().zip(&d_pre) {
                *g += p * d;
            }
        }
        let inv = 1.0 / trace.buckets.len() as f64;
        for &b in &trace.buckets {
            for (g, d) in self.embedding.grad.row_mut(b).iter_mut().zip(&d_pooled) {
                *g += d * inv;
            }
        }
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.embedding, &mut self.projection, &mut self.bias]
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }
}

/// `z = tanh(mean(embedding[hash(tok)]) · projection + bias)`.
pub fn encode(doc: &Document, params: &EncoderParams) -> Result<Representation> {
    Ok(params.forward(doc)?.output)
}

/// Reads `id v1 ... vd` rows. All rows must share one width and ids must be
/// unique.
pub fn load_precomputed(path: &Path) -> Result<BTreeMap<String, Representation>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MoteError::io(format!("reading vectors {}", path.display()), e))?;
    parse_precomputed(&text, path)
}

pub fn parse_precomputed(text: &str, path: &Path) -> Result<BTreeMap<String, Representation>> {
    let mut out = BTreeMap::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| MoteError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut fields = line.split_whitespace();
        let id = fields.next().unwrap().to_string();
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad value `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(err(format!("row `{id}` has no values")));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err(format!(
                    "row `{id}` has width {}, expected {w}",
                    values.len()
                )))
            }
            _ => {}
        }
        if out.insert(id.clone(), values).is_some() {
            return Err(err(format!("duplicate id `{id}`")));
        }
    }
    Ok(out)
}

pub fn format_precomputed<'a>(
    rows: impl IntoIterator<Item = (&'a String, &'a Representation)>,
) -> String {
    let mut out = String::new();
    for (id, v) in rows {
        out.push_str(id);
        for x in v {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}
