//! Comparison methods: the source-only model, self-labeling, and
//! chronological sequential fine-tuning.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::classify::{argmax, Classifier};
use crate::corpus::{split_train_test, Document, UnlabeledDocument};
use crate::encoder::{EncoderParams, EncoderTrace, Representation};
use crate::error::{MoteError, Result};
use crate::numerics::{adamw_step, softmax, Matrix, OptimizerConfig, Parameter, PROB_FLOOR};
use crate::rng::{stream_rng, STREAM_ENCODER_INIT, STREAM_HEAD_INIT, STREAM_SHUFFLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Representation width `d`.
    pub dim: usize,
    pub emb_dim: usize,
    pub buckets: usize,
    /// Expert block width.
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            dim: 32,
            emb_dim: 32,
            buckets: 4096,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceTrainConfig {
    /// Maximum number of epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Share of the training documents held out for early stopping; 0
    /// trains for exactly `epochs` epochs on everything.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for SourceTrainConfig {
    fn default() -> Self {
        SourceTrainConfig {
            epochs: 10,
            batch_size: 32,
            optimizer: OptimizerConfig::with_lr(1e-2),
            seed: 41,
            validation_fraction: 0.0,
            patience: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    SourceOnly,
    SelfLabeling,
    Chronological,
    /// Reserved row tag; not implemented.
    AntiCf,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::SourceOnly => "source",
            BaselineKind::SelfLabeling => "self_labeling",
            BaselineKind::Chronological => "chronological",
            BaselineKind::AntiCf => "anti_cf",
        }
    }
}

/// Encoder plus a single linear classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub encoder: EncoderParams,
    pub head_w: Parameter,
    pub head_b: Parameter,
    /// Indices of the time domains this model was trained on.
    pub provenance: Vec<usize>,
    /// Mean training loss per epoch, across all fitting stages.
    pub loss_trace: Vec<f64>,
}

impl SourceModel {
    pub fn init(dims: &ModelDims, classes: usize, seed: u64) -> Self {
        let encoder = EncoderParams::new(
            dims.buckets,
            dims.emb_dim,
            dims.dim,
            &mut stream_rng(seed, STREAM_ENCODER_INIT),
        );
        let head_w = Parameter::new(Matrix::xavier(
            dims.dim,
            classes,
            &mut stream_rng(seed, STREAM_HEAD_INIT),
        ));
        SourceModel {
            encoder,
            head_w,
            head_b: Parameter::zeros(1, classes),
            provenance: Vec::new(),
            loss_trace: Vec::new(),
        }
    }

    pub fn classes(&self) -> usize {
        self.head_w.value.cols()
    }

    pub fn head_probs(&self, z: &[f64]) -> Vec<f64> {
        let mut logits = self.head_b.value.row(0).to_vec();
        for (k, &zk) in z.iter().enumerate() {
            for (l, w) in logits.iter_mut().zip(self.head_w.value.row(k)) {
                *l += zk * w;
            }
        }
        softmax(&logits)
    }

    pub fn represent(&self, doc: &Document) -> Result<Representation> {
        Ok(self.encoder.forward(doc)?.output)
    }

    pub fn predict(&self, doc: &Document) -> Result<usize> {
        Ok(argmax(&self.class_probs(doc)?))
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.head_w.zero_grad();
        self.head_b.zero_grad();
    }

    fn reset_optimizer(&mut self) {
        for p in self.encoder.params_mut() {
            p.reset_optimizer();
        }
        self.head_w.reset_optimizer();
        self.head_b.reset_optimizer();
    }

    fn step(&mut self, opt: &OptimizerConfig) {
        for p in self.encoder.params_mut() {
            adamw_step(p, opt);
        }
        adamw_step(&mut self.head_w, opt);
        adamw_step(&mut self.head_b, opt);
    }

    /// Forward and backward for one document, scaled by `scale`; returns the
    /// unscaled cross-entropy.
    fn accumulate(&mut self, trace: &EncoderTrace, label: usize, scale: f64) -> f64 {
        let z = &trace.output;
        let probs = self.head_probs(z);
        let loss = -probs[label].max(PROB_FLOOR).ln();
        let mut d_logits = probs;
        d_logits[label] -= 1.0;
        d_logits.iter_mut().for_each(|g| *g *= scale);
        let mut dz = vec![0.0; z.len()];
        for (k, &zk) in z.iter().enumerate() {
            let w_row = self.head_w.value.row(k);
            dz[k] = w_row.iter().zip(&d_logits).map(|(w, d)| w * d).sum();
            for (g, d) in self.head_w.grad.row_mut(k).iter_mut().zip(&d_logits) {
                *g += zk * d;
            }
        }
        for (g, d) in self.head_b.grad.row_mut(0).iter_mut().zip(&d_logits) {
            *g += d;
        }
        self.encoder.backward(trace, &dz);
        loss
    }

    /// Continues training from the current weights with fresh optimizer
    /// state. `stage` selects an independent shuffling stream.
    pub fn fit(&mut self, docs: &[Document], cfg: &SourceTrainConfig, stage: u64) -> Result<()> {
        if docs.is_empty() {
            return Err(MoteError::Empty("training documents".into()));
        }
        if cfg.batch_size == 0 {
            return Err(MoteError::InvalidArgument("batch size must be positive".into()));
        }
        cfg.optimizer.validate()?;
        let classes = self.classes();
        if let Some(bad) = docs.iter().find(|d| d.label >= classes) {
            return Err(MoteError::InvalidArgument(format!(
                "document {}: label {} not below class count {classes}",
                bad.id, bad.label
            )));
        }
        if !(0.0..1.0).contains(&cfg.validation_fraction) {
            return Err(MoteError::InvalidArgument(format!(
                "validation fraction {} outside [0, 1)",
                cfg.validation_fraction
            )));
        }
        let (train, held_out) = if cfg.validation_fraction > 0.0 && docs.len() >= 2 {
            split_train_test(docs, 1.0 - cfg.validation_fraction, cfg.seed.wrapping_add(stage))?
        } else {
            (docs.to_vec(), Vec::new())
        };
        let buckets = train
            .iter()
            .map(|d| self.encoder.bucketize(d))
            .collect::<Result<Vec<_>>>()?;
        let mut rng: ChaCha8Rng = stream_rng(cfg.seed, STREAM_SHUFFLE + 64 * stage);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best: Option<(f64, SourceModel)> = None;
        let mut stale = 0;
        self.reset_optimizer();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                self.zero_grad();
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let trace = self.encoder.forward_buckets(&buckets[i]);
                    total += self.accumulate(&trace, train[i].label, scale);
                }
                self.step(&cfg.optimizer);
            }
            self.loss_trace.push(total / train.len() as f64);
            if held_out.is_empty() {
                continue;
            }
            let val = -self.validation_f1(&held_out)?;
            if best.as_ref().map_or(true, |(b, _)| val < *b) {
                best = Some((val, self.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        if let Some((_, snapshot)) = best {
            let trace = std::mem::take(&mut self.loss_trace);
            *self = snapshot;
            self.loss_trace = trace;
        }
        self.zero_grad();
        Ok(())
    }

    fn validation_f1(&self, docs: &[Document]) -> Result<f64> {
        let records = crate::classify::evaluate(self, docs, &[])?;
        Ok(crate::metrics::macro_f1(&records, self.classes()))
    }

    /// Mean cross-entropy over `docs`, with its gradient added to every
    /// parameter's `grad`. No optimizer step is taken.
    pub fn batch_gradient(&mut self, docs: &[Document]) -> Result<f64> {
        if docs.is_empty() {
            return Err(MoteError::Empty("gradient batch".into()));
        }
        let scale = 1.0 / docs.len() as f64;
        let mut total = 0.0;
        for d in docs {
            let trace = self.encoder.forward(d)?;
            total += self.accumulate(&trace, d.label, scale);
        }
        Ok(total * scale)
    }

    /// Mean cross-entropy over `docs` without updating anything.
    pub fn mean_loss(&self, docs: &[Document]) -> Result<f64> {
        let mut total = 0.0;
        for d in docs {
            let p = self.class_probs(d)?;
            total -= p[d.label].max(PROB_FLOOR).ln();
        }
        Ok(total / docs.len().max(1) as f64)
    }
}

impl Classifier for SourceModel {
    fn class_probs(&self, doc: &Document) -> Result<Vec<f64>> {
        Ok(self.head_probs(&self.represent(doc)?))
    }
}

/// Trains encoder and head jointly from a seeded initialization.
pub fn train_source(
    docs: &[Document],
    classes: usize,
    dims: &ModelDims,
    cfg: &SourceTrainConfig,
    provenance: Vec<usize>,
) -> Result<SourceModel> {
    let mut model = SourceModel::init(dims, classes, cfg.seed);
    model.fit(docs, cfg, 0)?;
    model.provenance = provenance;
    Ok(model)
}

/// Result of self-labeling: the retrained model and the silver labels it
/// was trained on (aligned with the pool).
#[derive(Debug, Clone)]
pub struct SelfLabeled {
    pub model: SourceModel,
    pub silver_labels: Vec<usize>,
}

/// Labels the pool with the source model, then trains a fresh model on gold
/// source data plus the silver-labeled pool.
pub fn self_label_adapt(
    source: &SourceModel,
    gold: &[Document],
    pool: &[UnlabeledDocument],
    dims: &ModelDims,
    cfg: &SourceTrainConfig,
) -> Result<SelfLabeled> {
    if pool.is_empty() {
        return Err(MoteError::Empty("unlabeled target pool".into()));
    }
    let mut silver_labels = Vec::with_capacity(pool.len());
    let mut combined = gold.to_vec();
    for u in pool {
        // Provisional label; replaced by the teacher's prediction below.
        let as_doc = u.with_label(0);
        let label = source.predict(&as_doc)?;
        silver_labels.push(label);
        combined.push(u.with_label(label));
    }
    let mut provenance = source.provenance.clone();
    provenance.push(usize::MAX);
    let model = train_source(&combined, source.classes(), dims, cfg, provenance)?;
    Ok(SelfLabeled {
        model,
        silver_labels,
    })
}

/// Fine-tunes through `domains` in order, each stage starting from the
/// previous stage's weights. Returns the model after every stage.
pub fn chronological_stages(
    domains: &[(usize, Vec<Document>)],
    classes: usize,
    dims: &ModelDims,
    cfg: &SourceTrainConfig,
) -> Result<Vec<SourceModel>> {
    if domains.is_empty() {
        return Err(MoteError::Empty("source domain list".into()));
    }
    let mut model = SourceModel::init(dims, classes, cfg.seed);
    let mut stages = Vec::with_capacity(domains.len());
    for (stage, (index, docs)) in domains.iter().enumerate() {
        if docs.is_empty() {
            return Err(MoteError::Empty(format!("time domain {index}")));
        }
        model.fit(docs, cfg, stage as u64)?;
        model.provenance.push(*index);
        stages.push(model.clone());
    }
    Ok(stages)
}

pub fn chronological_train(
    domains: &[(usize, Vec<Document>)],
    classes: usize,
    dims: &ModelDims,
    cfg: &SourceTrainConfig,
) -> Result<SourceModel> {
    Ok(chronological_stages(domains, classes, dims, cfg)?
        .pop()
        .expect("at least one stage"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::evaluate;
    use crate::corpus::{generate_drift_corpus, split_train_test, DriftConfig};

    fn tiny_dims() -> ModelDims {
        ModelDims {
            dim: 8,
            emb_dim: 8,
            buckets: 256,
            hidden: 16,
        }
    }

    fn cfg(epochs: usize, seed: u64) -> SourceTrainConfig {
        SourceTrainConfig {
            epochs,
            batch_size: 16,
            optimizer: OptimizerConfig::with_lr(0.02),
            seed,
            ..SourceTrainConfig::default()
        }
    }

    fn separable_corpus(seed: u64) -> crate::corpus::TemporalCorpus {
        generate_drift_corpus(&DriftConfig {
            vocab_size: 400,
            classes: 2,
            domains: 2,
            docs_per_domain: 200,
            token_drift: 0.0,
            label_shift: 0.0,
            topic_share: 0.8,
            topic_contrast: 3.0,
            seed,
            ..DriftConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn single_class_data() {
        let corpus = separable_corpus(1);
        let docs: Vec<Document> = corpus.domains[0]
            .documents
            .iter()
            .take(40)
            .cloned()
            .map(|mut d| {
                d.label = 1;
                d
            })
            .collect();
        let m = train_source(&docs, 2, &tiny_dims(), &cfg(30, 41), vec![0]).unwrap();
        assert!(docs.iter().all(|d| m.predict(d).unwrap() == 1));
        assert!(m.mean_loss(&docs).unwrap() < 0.01);
    }

    #[test]
    fn learns_separable_data() {
        let corpus = separable_corpus(2);
        let (train, test) = split_train_test(&corpus.domains[0].documents, 0.7, 1).unwrap();
        let m = train_source(&train, 2, &tiny_dims(), &cfg(15, 41), vec![0]).unwrap();
        let records = evaluate(&m, &test, &corpus.groups).unwrap();
        let acc = crate::metrics::samples_f1(&records);
        assert!(acc >= 0.9, "accuracy {acc}");
        let again = train_source(&train, 2, &tiny_dims(), &cfg(15, 41), vec![0]).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn rejects_empty_and_bad_labels() {
        assert!(train_source(&[], 2, &tiny_dims(), &cfg(1, 1), vec![]).is_err());
        let corpus = separable_corpus(3);
        let mut d = corpus.domains[0].documents[0].clone();
        d.label = 5;
        assert!(train_source(&[d], 2, &tiny_dims(), &cfg(1, 1), vec![]).is_err());
    }

    #[test]
    fn self_labeling_with_perfect_teacher_matches_gold_union() {
        let corpus = separable_corpus(4);
        let gold: Vec<Document> = corpus.domains[0].documents[..100].to_vec();
        let teacher = train_source(&gold, 2, &tiny_dims(), &cfg(15, 41), vec![0]).unwrap();
        // Pool restricted to documents the teacher gets right.
        let pool_docs: Vec<Document> = corpus.domains[1]
            .documents
            .iter()
            .filter(|d| teacher.predict(d).unwrap() == d.label)
            .take(50)
            .cloned()
            .collect();
        let pool: Vec<UnlabeledDocument> = pool_docs.iter().map(Document::without_label).collect();
        let out = self_label_adapt(&teacher, &gold, &pool, &tiny_dims(), &cfg(5, 41)).unwrap();
        assert_eq!(out.silver_labels.len(), pool.len());
        let mut union = gold.clone();
        union.extend(pool_docs.iter().cloned());
        let direct = train_source(&union, 2, &tiny_dims(), &cfg(5, 41), vec![]).unwrap();
        assert_eq!(out.model.head_w, direct.head_w);
        assert_eq!(out.model.encoder, direct.encoder);
        assert!(self_label_adapt(&teacher, &gold, &[], &tiny_dims(), &cfg(5, 41)).is_err());
    }

    #[test]
    fn silver_error_rate_equals_teacher_error_rate() {
        let corpus = generate_drift_corpus(&DriftConfig {
            vocab_size: 400,
            docs_per_domain: 120,
            token_drift: 0.9,
            seed: 5,
            ..DriftConfig::default()
        })
        .unwrap();
        let gold = corpus.domains[0].documents.clone();
        let target = &corpus.target().documents;
        let teacher = train_source(&gold, 3, &tiny_dims(), &cfg(8, 42), vec![0]).unwrap();
        let pool: Vec<UnlabeledDocument> = target.iter().map(Document::without_label).collect();
        let out = self_label_adapt(&teacher, &gold, &pool, &tiny_dims(), &cfg(2, 42)).unwrap();
        let silver_err = out
            .silver_labels
            .iter()
            .zip(target)
            .filter(|(s, d)| **s != d.label)
            .count();
        let teacher_err = target
            .iter()
            .filter(|d| teacher.predict(d).unwrap() != d.label)
            .count();
        assert_eq!(silver_err, teacher_err);
    }

    #[test]
    fn chronological_reductions() {
        let corpus = generate_drift_corpus(&DriftConfig {
            vocab_size: 400,
            docs_per_domain: 80,
            seed: 6,
            ..DriftConfig::default()
        })
        .unwrap();
        let c = cfg(4, 43);
        let single = vec![(1, corpus.domains[0].documents.clone())];
        let chrono = chronological_train(&single, 3, &tiny_dims(), &c).unwrap();
        let direct = train_source(&corpus.domains[0].documents, 3, &tiny_dims(), &c, vec![1]).unwrap();
        assert_eq!(chrono, direct);

        let all: Vec<(usize, Vec<Document>)> = corpus
            .domains
            .iter()
            .map(|d| (d.index, d.documents.clone()))
            .collect();
        let stages = chronological_stages(&all, 3, &tiny_dims(), &c).unwrap();
        for w in stages.windows(2) {
            assert_ne!(w[0].head_w, w[1].head_w);
        }
        assert_eq!(stages.last().unwrap().provenance, vec![1, 2, 3, 4]);

        let mut with_empty = all.clone();
        with_empty[1].1.clear();
        assert!(chronological_train(&with_empty, 3, &tiny_dims(), &c).is_err());
    }
}
