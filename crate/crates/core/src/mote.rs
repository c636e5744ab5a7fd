//! The full mixture of temporal experts: router warmup on clustered source
//! representations, joint adaptation of router and experts, and gated
//! weighted-average inference.

use rand::seq::SliceRandom;

use crate::baselines::SourceModel;
use crate::classify::{argmax, Classifier};
use crate::corpus::Document;
use crate::encoder::{EncoderParams, Representation};
use crate::error::{MoteError, Result};
use crate::experts::{ExpertParams, ExpertTrace};
use crate::numerics::{adamw_step, softmax, OptimizerConfig, PROB_FLOOR};
use crate::rng::{
    fnv1a64, stream_rng, STREAM_EXPERT_INIT, STREAM_RANDOM_DISPATCH, STREAM_ROUTER_INIT,
    STREAM_SHUFFLE,
};
use crate::shift_evaluator::{
    build_warmup_dataset, fit_clusters, ClusterModel, KMeansConfig, WarmupDataset,
};
use crate::temporal_router::{
    cv_squared_with_grad, gate, importance, GatingMode, GatingVector, RouterParams,
};

/// Module switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub no_warmup: bool,
    pub no_router: bool,
    pub no_evaluator: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        no_warmup: false,
        no_router: false,
        no_evaluator: false,
    };

    /// The row tag used in reports.
    pub fn method_name(&self) -> &'static str {
        match (self.no_warmup, self.no_router, self.no_evaluator) {
            (false, false, false) => "mote",
            (true, false, false) => "mote_no_warmup",
            (false, true, false) => "mote_no_router",
            (false, false, true) => "mote_no_evaluator",
            _ => "mote_ablated",
        }
    }
}

/// Architecture of the mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoteConfig {
    /// Number of clusters and experts.
    pub experts: usize,
    pub top_k: usize,
    pub lambda: f64,
    pub hidden: usize,
    pub mode: GatingMode,
}

impl Default for MoteConfig {
    fn default() -> Self {
        MoteConfig {
            experts: 3,
            top_k: 2,
            lambda: 0.01,
            hidden: 64,
            mode: GatingMode::Renormalized,
        }
    }
}

impl MoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.experts == 0 {
            return Err(MoteError::InvalidArgument("expert count must be positive".into()));
        }
        if self.top_k == 0 || self.top_k > self.experts {
            return Err(MoteError::InvalidArgument(format!(
                "top-k {} must lie in 1..={}",
                self.top_k, self.experts
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(MoteError::InvalidArgument(format!(
                "load-balance weight {} must be finite and non-negative",
                self.lambda
            )));
        }
        if self.hidden == 0 {
            return Err(MoteError::InvalidArgument("expert hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub adapt_epochs: usize,
    pub batch_size: usize,
    pub router_opt: OptimizerConfig,
    pub expert_opt: OptimizerConfig,
    pub seed: u64,
    pub ablation: Ablation,
    /// Lets adaptation gradients reach the encoder.
    pub unfreeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_epochs: 20,
            adapt_epochs: 20,
            batch_size: 32,
            router_opt: OptimizerConfig::with_lr(1e-4),
            expert_opt: OptimizerConfig::with_lr(1e-4),
            seed: 41,
            ablation: Ablation::FULL,
            unfreeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MoteError::InvalidArgument("batch size must be positive".into()));
        }
        self.router_opt.validate()?;
        self.expert_opt.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub gating: GatingVector,
    /// `(expert, p_k)` for every selected expert, in gating order.
    pub expert_probs: Vec<(usize, Vec<f64>)>,
}

impl Prediction {
    pub fn class(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Cross-entropy and auxiliary terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub aux: f64,
    pub total: f64,
}

/// One training example for the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptItem {
    pub id: String,
    pub z: Representation,
    pub label: usize,
    /// Encoder bucket ids; only needed when the encoder is trainable.
    pub buckets: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoteModel {
    pub encoder: EncoderParams,
    pub clusters: ClusterModel,
    pub router: RouterParams,
    pub experts: Vec<ExpertParams>,
    pub top_k: usize,
    pub lambda: f64,
    pub classes: usize,
    pub mode: GatingMode,
    pub ablation: Ablation,
    /// Seed of the random single-expert dispatch used without a router.
    pub dispatch_seed: u64,
    pub warmup_trace: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

/// Uniform pseudo-random expert for a document id, fixed per seed.
pub fn random_dispatch(id: &str, seed: u64, experts: usize) -> usize {
    let mut key = id.as_bytes().to_vec();
    key.extend_from_slice(&seed.to_le_bytes());
    key.extend_from_slice(&STREAM_RANDOM_DISPATCH.to_le_bytes());
    let h = fnv1a64(&key);
    // Finalizer spreads FNV's weak low bits before the modulo.
    let h = (h ^ (h >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    let h = h ^ (h >> 33);
    (h % experts as u64) as usize
}

struct DocForward {
    gating: GatingVector,
    traces: Vec<(usize, ExpertTrace)>,
    probs: Vec<f64>,
    prefactor: f64,
}

impl MoteModel {
    /// Assembles a mixture over a trained source model: clusters the source
    /// representations and seeds every expert's classifier from the source
    /// head, so the untrained mixture reproduces the source model.
    pub fn from_source(
        source: &SourceModel,
        source_reps: &[Representation],
        cfg: &MoteConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = source.encoder.dim();
        let classes = source.classes();
        let clusters = fit_clusters(source_reps, &KMeansConfig::new(cfg.experts, seed))?;
        let router = RouterParams::new(d, cfg.experts, &mut stream_rng(seed, STREAM_ROUTER_INIT));
        let mut rng = stream_rng(seed, STREAM_EXPERT_INIT);
        let mut experts = Vec::with_capacity(cfg.experts);
        for _ in 0..cfg.experts {
            let mut e = ExpertParams::new(d, cfg.hidden, classes, &mut rng);
            e.wc.value.fill(0.0);
            e.load_head(&source.head_w.value, &source.head_b.value)?;
            experts.push(e);
        }
        Ok(MoteModel {
            encoder: source.encoder.clone(),
            clusters,
            router,
            experts,
            top_k: cfg.top_k,
            lambda: cfg.lambda,
            classes,
            mode: cfg.mode,
            ablation: Ablation::FULL,
            dispatch_seed: seed,
            warmup_trace: Vec::new(),
            loss_trace: Vec::new(),
        })
    }

    pub fn expert_count(&self) -> usize {
        self.experts.len()
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    fn check(&self) -> Result<()> {
        let t = self.expert_count();
        if t == 0 || self.clusters.clusters() != t || self.router.experts() != t {
            return Err(MoteError::InvalidArgument(format!(
                "cluster count {}, router width {} and expert count {t} must agree",
                self.clusters.clusters(),
                self.router.experts()
            )));
        }
        if self.top_k == 0 || self.top_k > t {
            return Err(MoteError::InvalidArgument(format!(
                "top-k {} must lie in 1..={t}",
                self.top_k
            )));
        }
        Ok(())
    }

    fn gating_for(&self, id: &str, z: &[f64]) -> Result<GatingVector> {
        if self.ablation.no_router {
            let t = self.expert_count();
            Ok(GatingVector::one_hot(t, random_dispatch(id, self.dispatch_seed, t)))
        } else {
            gate(z, &self.router, self.top_k, self.mode)
        }
    }

    fn shift(&self, z: &[f64], j: usize) -> Vec<f64> {
        if self.ablation.no_evaluator {
            vec![0.0; z.len()]
        } else {
            z.iter().zip(&self.clusters.centroids[j]).map(|(a, c)| a - c).collect()
        }
    }

    fn forward_doc(&self, id: &str, z: &[f64]) -> Result<DocForward> {
        let gating = self.gating_for(id, z)?;
        let prefactor = match (gating.mode, self.ablation.no_router) {
            (GatingMode::RawSoftmax, false) => 1.0 / gating.selected.len() as f64,
            _ => 1.0,
        };
        let mut probs = vec![0.0; self.classes];
        let mut traces = Vec::with_capacity(gating.selected.len());
        for &j in &gating.selected {
            let trace = self.experts[j].forward(z, &self.shift(z, j))?;
            let w = prefactor * gating.weights[j];
            for (p, q) in probs.iter_mut().zip(&trace.output.probs) {
                *p += w * q;
            }
            traces.push((j, trace));
        }
        Ok(DocForward {
            gating,
            traces,
            probs,
            prefactor,
        })
    }

    /// Mixture prediction from a precomputed representation.
    pub fn predict_representation(&self, id: &str, z: &[f64]) -> Result<Prediction> {
        self.check()?;
        let f = self.forward_doc(id, z)?;
        Ok(Prediction {
            probs: f.probs,
            expert_probs: f
                .traces
                .into_iter()
                .map(|(j, t)| (j, t.output.probs))
                .collect(),
            gating: f.gating,
        })
    }

    pub fn predict(&self, doc: &Document) -> Result<Prediction> {
        let z = self.encoder.forward(doc)?.output;
        self.predict_representation(&doc.id, &z)
    }

    pub fn zero_grad(&mut self) {
        self.router.gate.zero_grad();
        self.experts.iter_mut().for_each(ExpertParams::zero_grad);
        self.encoder.zero_grad();
    }

    /// Batch objective `mean CE + λ·L_aux`. With `accumulate`, gradients are
    /// added to the router and every expert (and to the encoder when items
    /// carry bucket ids).
    pub fn batch_loss(&mut self, items: &[AdaptItem], accumulate: bool) -> Result<LossParts> {
        self.check()?;
        if items.is_empty() {
            return Err(MoteError::Empty("adaptation batch".into()));
        }
        let n = items.len() as f64;
        let mut forwards = Vec::with_capacity(items.len());
        let mut encoder_traces = Vec::with_capacity(items.len());
        for item in items {
            if item.label >= self.classes {
                return Err(MoteError::InvalidArgument(format!(
                    "document {}: label {} not below class count {}",
                    item.id, item.label, self.classes
                )));
            }
            let (z, trace) = match (&item.buckets, accumulate) {
                (Some(b), true) => {
                    let t = self.encoder.forward_buckets(b);
                    (t.output.clone(), Some(t))
                }
                _ => (item.z.clone(), None),
            };
            forwards.push((z.clone(), self.forward_doc(&item.id, &z)?));
            encoder_traces.push(trace);
        }
        let cross_entropy = forwards
            .iter()
            .zip(items)
            .map(|((_, f), it)| -f.probs[it.label].max(PROB_FLOOR).ln())
            .sum::<f64>()
            / n;
        let gates: Vec<GatingVector> = forwards.iter().map(|(_, f)| f.gating.clone()).collect();
        let (aux, aux_grad) = cv_squared_with_grad(&importance(&gates))?;
        let total = cross_entropy + self.lambda * aux;
        if !accumulate {
            return Ok(LossParts {
                cross_entropy,
                aux,
                total,
            });
        }
        for (((z, f), item), enc) in forwards.iter().zip(items).zip(&encoder_traces) {
            let p_y = f.probs[item.label];
            let mut d_mix = vec![0.0; self.classes];
            if p_y > PROB_FLOOR {
                d_mix[item.label] = -1.0 / (n * p_y);
            }
            let mut d_weights = vec![0.0; self.expert_count()];
            let mut dz = vec![0.0; z.len()];
            for (j, trace) in &f.traces {
                let j = *j;
                let w = f.prefactor * f.gating.weights[j];
                d_weights[j] = f.prefactor
                    * trace
                        .output
                        .probs
                        .iter()
                        .zip(&d_mix)
                        .map(|(p, d)| p * d)
                        .sum::<f64>()
                    + self.lambda * aux_grad[j];
                let d_probs: Vec<f64> = d_mix.iter().map(|d| w * d).collect();
                let (dz_e, dv) = self.experts[j].backward(trace, &d_probs);
                for (k, g) in dz.iter_mut().enumerate() {
                    *g += dz_e[k];
                    if !self.ablation.no_evaluator {
                        *g += dv[k];
                    }
                }
            }
            if !self.ablation.no_router {
                let dz_r = self.router.backward(z, &f.gating, &d_weights);
                dz.iter_mut().zip(&dz_r).for_each(|(a, b)| *a += b);
            }
            if let Some(trace) = enc {
                self.encoder.backward(trace, &dz);
            }
        }
        Ok(LossParts {
            cross_entropy,
            aux,
            total,
        })
    }

    /// Mean cross-entropy of the router's full softmax against cluster labels.
    pub fn warmup_loss(&mut self, pairs: &[(Representation, usize)], accumulate: bool) -> Result<f64> {
        if pairs.is_empty() {
            return Err(MoteError::Empty("warmup batch".into()));
        }
        let n = pairs.len() as f64;
        let mut total = 0.0;
        for (z, label) in pairs {
            let probs = softmax(&self.router.logits(z)?);
            total -= probs[*label].max(PROB_FLOOR).ln();
            if accumulate {
                let mut d_logits = probs;
                d_logits[*label] -= 1.0;
                d_logits.iter_mut().for_each(|g| *g /= n);
                self.router.backward_logits(z, &d_logits);
            }
        }
        Ok(total / n)
    }

    /// Trains the router to dispatch each representation to its cluster's
    /// expert. Mutates only the router.
    pub fn warmup_router(&mut self, warmup: &WarmupDataset, cfg: &TrainConfig) -> Result<()> {
        cfg.validate()?;
        if warmup.is_empty() {
            return Err(MoteError::Empty("warmup dataset".into()));
        }
        let t = self.expert_count();
        if let Some((_, l)) = warmup.pairs.iter().find(|(_, l)| *l >= t) {
            return Err(MoteError::IndexOutOfRange {
                what: "warmup label",
                index: *l,
                len: t,
            });
        }
        let mut rng = stream_rng(cfg.seed, STREAM_SHUFFLE + 1000);
        let mut order: Vec<usize> = (0..warmup.len()).collect();
        self.router.gate.reset_optimizer();
        for _ in 0..cfg.warmup_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let pairs: Vec<(Representation, usize)> =
                    batch.iter().map(|&i| warmup.pairs[i].clone()).collect();
                self.router.gate.zero_grad();
                total += self.warmup_loss(&pairs, true)? * pairs.len() as f64;
                adamw_step(&mut self.router.gate, &cfg.router_opt);
            }
            self.warmup_trace.push(total / warmup.len() as f64);
        }
        self.router.gate.zero_grad();
        Ok(())
    }

    /// Joint training of router and experts on labeled source data.
    pub fn train_adaptation(&mut self, items: &[AdaptItem], cfg: &TrainConfig) -> Result<()> {
        cfg.validate()?;
        self.check()?;
        if items.is_empty() {
            return Err(MoteError::Empty("adaptation data".into()));
        }
        if let Some(bad) = items.iter().find(|i| i.label >= self.classes) {
            return Err(MoteError::InvalidArgument(format!(
                "document {}: label {} not below class count {}",
                bad.id, bad.label, self.classes
            )));
        }
        self.ablation = cfg.ablation;
        self.dispatch_seed = cfg.seed;
        let mut rng = stream_rng(cfg.seed, STREAM_SHUFFLE + 1001);
        let mut order: Vec<usize> = (0..items.len()).collect();
        self.router.gate.reset_optimizer();
        for e in &mut self.experts {
            e.params_mut().into_iter().for_each(|p| p.reset_optimizer());
        }
        if cfg.unfreeze_encoder {
            for p in self.encoder.params_mut() {
                p.reset_optimizer();
            }
        }
        for _ in 0..cfg.adapt_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let chunk: Vec<AdaptItem> = batch
                    .iter()
                    .map(|&i| {
                        let mut it = items[i].clone();
                        if !cfg.unfreeze_encoder {
                            it.buckets = None;
                        }
                        it
                    })
                    .collect();
                self.zero_grad();
                total += self.batch_loss(&chunk, true)?.total * chunk.len() as f64;
                if !cfg.ablation.no_router {
                    adamw_step(&mut self.router.gate, &cfg.router_opt);
                }
                for ex in &mut self.experts {
                    for p in ex.params_mut() {
                        adamw_step(p, &cfg.expert_opt);
                    }
                }
                if cfg.unfreeze_encoder {
                    for p in self.encoder.params_mut() {
                        adamw_step(p, &cfg.expert_opt);
                    }
                }
            }
            self.loss_trace.push(total / items.len() as f64);
        }
        self.zero_grad();
        Ok(())
    }

    /// Number of documents whose highest-weight expert is each expert.
    pub fn assignment_counts(&self, items: &[(String, Representation)]) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.expert_count()];
        for (id, z) in items {
            counts[self.gating_for(id, z)?.primary()] += 1;
        }
        Ok(counts)
    }
}

impl Classifier for MoteModel {
    fn class_probs(&self, doc: &Document) -> Result<Vec<f64>> {
        Ok(self.predict(doc)?.probs)
    }
}

/// Adaptation items carrying the source encoder's representations.
pub fn adapt_items(encoder: &EncoderParams, docs: &[Document]) -> Result<Vec<AdaptItem>> {
    docs.iter()
        .map(|d| {
            let buckets = encoder.bucketize(d)?;
            Ok(AdaptItem {
                id: d.id.clone(),
                z: encoder.forward_buckets(&buckets).output,
                label: d.label,
                buckets: Some(buckets),
            })
        })
        .collect()
}

/// The complete pipeline on labeled source documents: cluster, warm up
/// (unless ablated) and adapt.
pub fn train_mote(
    source: &SourceModel,
    source_docs: &[Document],
    mote_cfg: &MoteConfig,
    cfg: &TrainConfig,
) -> Result<MoteModel> {
    let items = adapt_items(&source.encoder, source_docs)?;
    let reps: Vec<Representation> = items.iter().map(|i| i.z.clone()).collect();
    let mut model = MoteModel::from_source(source, &reps, mote_cfg, cfg.seed)?;
    if !cfg.ablation.no_warmup && !cfg.ablation.no_router {
        let warmup = build_warmup_dataset(&reps, &model.clusters)?;
        model.warmup_router(&warmup, cfg)?;
    }
    model.train_adaptation(&items, cfg)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{train_source, ModelDims, SourceTrainConfig};
    use crate::corpus::{generate_drift_corpus, DriftConfig};
    use crate::numerics::{finite_diff_check, Matrix, Parameter};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_model(t: usize, k: usize, d: usize, c: usize, seed: u64) -> MoteModel {
        let mut rng = stream_rng(seed, 99);
        let mut rand_param = |p: &mut Parameter| {
            for x in p.value.data_mut() {
                *x = rng.sample::<f64, _>(StandardNormal) * 0.5;
            }
        };
        let mut encoder = EncoderParams::zeros(16, 4, d);
        encoder.params_mut().into_iter().for_each(&mut rand_param);
        let mut experts = Vec::new();
        for _ in 0..t {
            let mut e = ExpertParams::zeros(d, 5, c);
            e.params_mut().into_iter().for_each(&mut rand_param);
            experts.push(e);
        }
        let mut router = RouterParams::from_matrix(Matrix::zeros(d, t));
        rand_param(&mut router.gate);
        let centroids = (0..t)
            .map(|j| (0..d).map(|i| ((i + j) as f64 * 0.37).sin()).collect())
            .collect();
        MoteModel {
            encoder,
            clusters: ClusterModel::from_centroids(centroids),
            router,
            experts,
            top_k: k,
            lambda: 0.01,
            classes: c,
            mode: GatingMode::Renormalized,
            ablation: Ablation::FULL,
            dispatch_seed: 1,
            warmup_trace: vec![],
            loss_trace: vec![],
        }
    }

    fn random_items(n: usize, d: usize, c: usize, seed: u64) -> Vec<AdaptItem> {
        let mut rng = stream_rng(seed, 98);
        (0..n)
            .map(|i| AdaptItem {
                id: format!("doc{i}"),
                z: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: rng.gen_range(0..c),
                buckets: Some((0..3).map(|_| rng.gen_range(0..16)).collect()),
            })
            .collect()
    }

    /// Worst finite-difference error over every router and expert parameter.
    fn worst_gradient_error(model: &MoteModel, items: &[AdaptItem]) -> f64 {
        let mut m = model.clone();
        m.zero_grad();
        m.batch_loss(items, true).unwrap();
        let mut worst: f64 = 0.0;
        let t = m.expert_count();
        let n_params = 1 + 6 * t + 3;
        for slot in 0..n_params {
            let mut param = match slot {
                0 => m.router.gate.clone(),
                s if s <= 6 * m.expert_count() => {
                    m.experts[(s - 1) / 6].params()[(s - 1) % 6].clone()
                }
                s => m.encoder.params_mut()[s - 1 - 6 * t].clone(),
            };
            let base = m.clone();
            let err = finite_diff_check(&mut param, 1e-5, |p| {
                let mut probe = base.clone();
                match slot {
                    0 => probe.router.gate.value = p.value.clone(),
                    s if s <= 6 * probe.expert_count() => {
                        probe.experts[(s - 1) / 6].params_mut()[(s - 1) % 6].value = p.value.clone()
                    }
                    s => {
                        let t = probe.expert_count();
                        probe.encoder.params_mut()[s - 1 - 6 * t].value = p.value.clone()
                    }
                }
                // Re-encode so encoder perturbations reach the objective.
                let shifted: Vec<AdaptItem> = items
                    .iter()
                    .map(|it| {
                        let mut it = it.clone();
                        it.z = probe.encoder.forward_buckets(it.buckets.as_ref().unwrap()).output;
                        it
                    })
                    .collect();
                probe.batch_loss(&shifted, false).unwrap().total
            });
            worst = worst.max(err);
        }
        worst
    }

    fn encoded(model: &MoteModel, items: &[AdaptItem]) -> Vec<AdaptItem> {
        items
            .iter()
            .map(|it| {
                let mut it = it.clone();
                it.z = model.encoder.forward_buckets(it.buckets.as_ref().unwrap()).output;
                it
            })
            .collect()
    }

    #[test]
    fn full_loss_gradients_match_finite_differences() {
        for (seed, mode) in [(1, GatingMode::Renormalized), (2, GatingMode::RawSoftmax)] {
            let mut m = random_model(3, 2, 4, 3, seed);
            m.mode = mode;
            let items = encoded(&m, &random_items(4, 4, 3, seed));
            let err = worst_gradient_error(&m, &items);
            assert!(err < 1e-4, "mode {mode:?}: relative error {err}");
        }
    }

    #[test]
    fn ablated_gradients_match_finite_differences() {
        let mut m = random_model(3, 2, 4, 3, 7);
        m.ablation.no_evaluator = true;
        let items = encoded(&m, &random_items(4, 4, 3, 7));
        assert!(worst_gradient_error(&m, &items) < 1e-4);
        m.ablation = Ablation {
            no_router: true,
            ..Ablation::FULL
        };
        assert!(worst_gradient_error(&m, &items) < 1e-4);
    }

    #[test]
    fn loss_is_cross_entropy_plus_weighted_aux() {
        let mut m = random_model(3, 2, 4, 3, 3);
        let items = random_items(6, 4, 3, 3);
        let parts = m.batch_loss(&items, false).unwrap();
        // Independent recomputation from per-document predictions.
        let mut ce = 0.0;
        let mut imp = [0.0; 3];
        for it in &items {
            let p = m.predict_representation(&it.id, &it.z).unwrap();
            ce -= p.probs[it.label].ln();
            for j in 0..3 {
                imp[j] += p.gating.weights[j];
            }
        }
        ce /= items.len() as f64;
        let mean = imp.iter().sum::<f64>() / 3.0;
        let var = imp.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
        let aux = var / (mean * mean);
        assert!((parts.cross_entropy - ce).abs() < 1e-12);
        assert!((parts.aux - aux).abs() < 1e-12);
        assert!((parts.total - (ce + 0.01 * aux)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_convex_mixtures() {
        let m = random_model(1, 1, 4, 3, 4);
        let z = vec![0.1, -0.2, 0.3, 0.0];
        let p = m.predict_representation("x", &z).unwrap();
        let v: Vec<f64> = z.iter().zip(&m.clusters.centroids[0]).map(|(a, b)| a - b).collect();
        assert_eq!(p.probs, m.experts[0].forward(&z, &v).unwrap().output.probs);

        let mut twin = random_model(3, 2, 4, 3, 5);
        let e = twin.experts[0].clone();
        twin.experts = vec![e.clone(), e.clone(), e];
        let c = twin.clusters.centroids[0].clone();
        twin.clusters = ClusterModel::from_centroids(vec![c.clone(), c.clone(), c]);
        let p = twin.predict_representation("x", &z).unwrap();
        for (a, b) in p.probs.iter().zip(&p.expert_probs[0].1) {
            assert!((a - b).abs() < 1e-12);
        }

        // Gates [0.731059, 0.268941] over one-hot expert outputs.
        let mut conv = random_model(2, 2, 2, 2, 6);
        conv.ablation.no_evaluator = true;
        conv.router.gate.value = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 0.0]]).unwrap();
        for (j, e) in conv.experts.iter_mut().enumerate() {
            e.params_mut().into_iter().for_each(|p| p.value.fill(0.0));
            e.bc.value.data_mut()[j] = 60.0;
        }
        let p = conv.predict_representation("x", &[1.0, 0.0]).unwrap();
        assert!((p.probs[0] - 0.731_058_578_630_004_9).abs() < 1e-9);
        assert!((p.probs[1] - 0.268_941_421_369_995_1).abs() < 1e-9);
    }

    #[test]
    fn expert_permutation_equivariance() {
        let m = random_model(3, 2, 4, 3, 8);
        let perm = [2, 0, 1];
        let mut q = m.clone();
        q.experts = perm.iter().map(|&j| m.experts[j].clone()).collect();
        q.clusters = ClusterModel::from_centroids(
            perm.iter().map(|&j| m.clusters.centroids[j].clone()).collect(),
        );
        for r in 0..4 {
            for (new, &old) in perm.iter().enumerate() {
                q.router.gate.value[(r, new)] = m.router.gate.value[(r, old)];
            }
        }
        for it in random_items(30, 4, 3, 8) {
            let a = m.predict_representation(&it.id, &it.z).unwrap();
            let b = q.predict_representation(&it.id, &it.z).unwrap();
            assert_eq!(a.class(), b.class());
            for (x, y) in a.probs.iter().zip(&b.probs) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn blobs(n: usize, seed: u64) -> Vec<Representation> {
        let mut rng = stream_rng(seed, 97);
        (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { 3.0 } else { -3.0 };
                vec![
                    c + rng.sample::<f64, _>(StandardNormal) * 0.3,
                    c + rng.sample::<f64, _>(StandardNormal) * 0.3,
                ]
            })
            .collect()
    }

    #[test]
    fn warmup_separates_blobs() {
        let pts = blobs(200, 1);
        let mut m = random_model(2, 1, 2, 2, 9);
        m.clusters = fit_clusters(&pts, &KMeansConfig::new(2, 1)).unwrap();
        let warmup = build_warmup_dataset(&pts, &m.clusters).unwrap();
        let cfg = TrainConfig {
            router_opt: OptimizerConfig::with_lr(1e-2),
            ..TrainConfig::default()
        };
        let mut again = m.clone();
        m.warmup_router(&warmup, &cfg).unwrap();
        let correct = warmup
            .pairs
            .iter()
            .filter(|(z, l)| gate(z, &m.router, 1, m.mode).unwrap().primary() == *l)
            .count();
        assert!(correct as f64 / 200.0 >= 0.95, "{correct}/200");
        again.warmup_router(&warmup, &cfg).unwrap();
        assert_eq!(m.router.gate.value, again.router.gate.value);

        let mut idle = random_model(2, 1, 2, 2, 9);
        let before = idle.router.clone();
        let zero = TrainConfig {
            warmup_epochs: 0,
            ..cfg
        };
        idle.warmup_router(&warmup, &zero).unwrap();
        assert_eq!(idle.router.gate.value, before.gate.value);
        assert!(idle.warmup_router(&WarmupDataset { pairs: vec![] }, &cfg).is_err());
        let bad = WarmupDataset {
            pairs: vec![(vec![0.0, 0.0], 2)],
        };
        assert!(idle.warmup_router(&bad, &cfg).is_err());
    }

    #[test]
    fn random_dispatch_is_roughly_uniform_and_stable() {
        let mut counts = [0usize; 3];
        for i in 0..3000 {
            counts[random_dispatch(&format!("d{i}"), 41, 3)] += 1;
        }
        assert!(counts.iter().all(|&c| (900..1100).contains(&c)), "{counts:?}");
        assert_eq!(random_dispatch("x", 41, 3), random_dispatch("x", 41, 3));
    }

    #[test]
    fn end_to_end_training_and_init_matches_source() {
        let corpus = generate_drift_corpus(&DriftConfig {
            vocab_size: 400,
            docs_per_domain: 100,
            seed: 3,
            ..DriftConfig::default()
        })
        .unwrap();
        let dims = ModelDims {
            dim: 8,
            emb_dim: 8,
            buckets: 256,
            hidden: 12,
        };
        let docs: Vec<Document> = corpus.source_domains().iter().flat_map(|d| d.documents.clone()).collect();
        let scfg = SourceTrainConfig {
            epochs: 5,
            ..SourceTrainConfig::default()
        };
        let source = train_source(&docs, 3, &dims, &scfg, vec![1, 2, 3]).unwrap();
        let mcfg = MoteConfig {
            hidden: 12,
            ..MoteConfig::default()
        };
        let items = adapt_items(&source.encoder, &docs).unwrap();
        let reps: Vec<Representation> = items.iter().map(|i| i.z.clone()).collect();
        let init = MoteModel::from_source(&source, &reps, &mcfg, 41).unwrap();
        for d in &corpus.target().documents[..20] {
            let a = init.class_probs(d).unwrap();
            let b = source.class_probs(d).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }

        let cfg = TrainConfig {
            warmup_epochs: 3,
            adapt_epochs: 4,
            expert_opt: OptimizerConfig::with_lr(1e-3),
            router_opt: OptimizerConfig::with_lr(1e-3),
            ..TrainConfig::default()
        };
        let m = train_mote(&source, &docs, &mcfg, &cfg).unwrap();
        assert_eq!(m.loss_trace.len(), 4);
        assert!(m.loss_trace.last() <= m.loss_trace.first());
        assert_eq!(m.encoder, source.encoder);
        let again = train_mote(&source, &docs, &mcfg, &cfg).unwrap();
        assert_eq!(m, again);
        for d in &corpus.target().documents[..20] {
            let p = m.predict(d).unwrap();
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        let mut bad = docs[..3].to_vec();
        bad[0].label = 9;
        assert!(train_mote(&source, &bad, &mcfg, &cfg).is_err());
    }
}
