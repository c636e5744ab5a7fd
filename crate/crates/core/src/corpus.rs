//! Timestamped documents, temporal domains, and a synthetic drift generator.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MoteError, Result};
use crate::rng::{stream_rng, STREAM_DOWNSAMPLE, STREAM_GENERATOR, STREAM_SPLIT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub timestamp: i64,
    pub group: String,
    pub language: String,
}

/// A document whose label has been withheld.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabeledDocument {
    pub id: String,
    pub tokens: Vec<String>,
    pub timestamp: i64,
    pub group: String,
    pub language: String,
}

impl Document {
    pub fn without_label(&self) -> UnlabeledDocument {
        UnlabeledDocument {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            timestamp: self.timestamp,
            group: self.group.clone(),
            language: self.language.clone(),
        }
    }
}

impl UnlabeledDocument {
    pub fn with_label(&self, label: usize) -> Document {
        Document {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            label,
            timestamp: self.timestamp,
            group: self.group.clone(),
            language: self.language.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeDomain {
    /// 1-based chronological index.
    pub index: usize,
    /// Half-open interval `[start, end)`.
    pub start: i64,
    pub end: i64,
    pub documents: Vec<Document>,
}

impl TimeDomain {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Chronologically ordered domains. The last domain is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalCorpus {
    pub domains: Vec<TimeDomain>,
    pub classes: usize,
    pub groups: Vec<String>,
}

impl TemporalCorpus {
    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn target_index(&self) -> usize {
        self.domains.len() - 1
    }

    pub fn target(&self) -> &TimeDomain {
        &self.domains[self.target_index()]
    }

    pub fn source_domains(&self) -> &[TimeDomain] {
        &self.domains[..self.target_index()]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.domains.iter().map(TimeDomain::len).collect()
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == name)
    }
}

/// Buckets documents into the half-open intervals given by `boundaries`.
pub fn partition_by_time(
    documents: Vec<Document>,
    boundaries: &[i64],
    classes: usize,
) -> Result<TemporalCorpus> {
    if boundaries.len() < 2 {
        return Err(MoteError::InvalidArgument(
            "need at least two boundaries (one domain)".into(),
        ));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MoteError::InvalidArgument(format!(
            "boundaries must be strictly increasing: {boundaries:?}"
        )));
    }
    let lo = boundaries[0];
    let hi = *boundaries.last().unwrap();
    let mut domains: Vec<TimeDomain> = boundaries
        .windows(2)
        .enumerate()
        .map(|(i, w)| TimeDomain {
            index: i + 1,
            start: w[0],
            end: w[1],
            documents: Vec::new(),
        })
        .collect();
    let mut groups = BTreeSet::new();
    for doc in documents {
        if doc.timestamp < lo || doc.timestamp >= hi {
            return Err(MoteError::TimestampOutOfRange {
                id: doc.id,
                timestamp: doc.timestamp,
                lo,
                hi,
            });
        }
        if doc.label >= classes {
            return Err(MoteError::InvalidArgument(format!(
                "document {}: label {} not below class count {classes}",
                doc.id, doc.label
            )));
        }
        // Largest boundary <= timestamp.
        let slot = boundaries.partition_point(|&b| b <= doc.timestamp) - 1;
        groups.insert(doc.group.clone());
        domains[slot].documents.push(doc);
    }
    Ok(TemporalCorpus {
        domains,
        classes,
        groups: groups.into_iter().collect(),
    })
}

/// Samples every domain down to the size of the smallest one.
pub fn downsample_to_smallest(corpus: &TemporalCorpus, seed: u64) -> Result<TemporalCorpus> {
    let smallest = corpus.sizes().into_iter().min().unwrap_or(0);
    if let Some(empty) = corpus.domains.iter().find(|d| d.is_empty()) {
        return Err(MoteError::Empty(format!("time domain {}", empty.index)));
    }
    let mut rng = stream_rng(seed, STREAM_DOWNSAMPLE);
    let domains = corpus
        .domains
        .iter()
        .map(|d| {
            let mut keep = rand::seq::index::sample(&mut rng, d.len(), smallest).into_vec();
            keep.sort_unstable();
            TimeDomain {
                documents: keep.into_iter().map(|i| d.documents[i].clone()).collect(),
                ..d.clone()
            }
        })
        .collect();
    Ok(TemporalCorpus {
        domains,
        classes: corpus.classes,
        groups: corpus.groups.clone(),
    })
}

/// Shuffled split with `round(ratio * n)` training documents.
pub fn split_train_test(
    docs: &[Document],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(MoteError::InvalidArgument(format!(
            "train ratio {ratio} must lie strictly between 0 and 1"
        )));
    }
    let n = docs.len();
    if n < 2 {
        return Err(MoteError::InvalidArgument(format!(
            "cannot split {n} documents into train and test"
        )));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let train = order[..n_train].iter().map(|&i| docs[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| docs[i].clone()).collect();
    Ok((train, test))
}

/// Parameters of the synthetic temporal-drift corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftConfig {
    pub vocab_size: usize,
    pub classes: usize,
    pub domains: usize,
    pub docs_per_domain: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of tokens drawn from the drifted distribution in the last domain.
    pub token_drift: f64,
    /// Interpolation weight toward the shifted class prior in the last domain.
    pub label_shift: f64,
    /// Probability that a document belongs to the first group.
    pub group_balance: f64,
    /// Share of each document's tokens drawn from class-dependent topic words.
    pub topic_share: f64,
    /// Log-scale spread of per-class topic word weights; larger is easier.
    pub topic_contrast: f64,
    /// Fraction of the drift topic pool shared with the base topic pool.
    /// Shared tokens change their class association over time.
    pub topic_overlap: f64,
    /// Weight by which each class's drift topic borrows the base topic of the
    /// next class.
    pub topic_rotation: f64,
    pub first_timestamp: i64,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            vocab_size: 2000,
            classes: 3,
            domains: 4,
            docs_per_domain: 500,
            min_len: 10,
            max_len: 30,
            token_drift: 0.6,
            label_shift: 0.3,
            group_balance: 0.4,
            topic_share: 0.8,
            topic_contrast: 1.5,
            topic_overlap: 1.0,
            topic_rotation: 1.0,
            first_timestamp: 2011,
            seed: 1,
        }
    }
}

pub const GROUP_NAMES: [&str; 2] = ["female", "male"];

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MoteError::InvalidArgument(m));
        if self.classes < 2 {
            return bad(format!("classes = {} (need >= 2)", self.classes));
        }
        if self.domains < 2 {
            return bad(format!("domains = {} (need >= 2)", self.domains));
        }
        if self.docs_per_domain < 10 {
            return bad(format!(
                "docs_per_domain = {} (need >= 10)",
                self.docs_per_domain
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!(
                "document length range [{}, {}] is invalid",
                self.min_len, self.max_len
            ));
        }
        if self.vocab_size < 8 * self.classes {
            return bad(format!(
                "vocab_size = {} too small for {} classes",
                self.vocab_size, self.classes
            ));
        }
        for (name, v) in [
            ("token_drift", self.token_drift),
            ("label_shift", self.label_shift),
            ("topic_share", self.topic_share),
            ("topic_overlap", self.topic_overlap),
            ("topic_rotation", self.topic_rotation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.group_balance > 0.0 && self.group_balance < 1.0) {
            return bad(format!(
                "group_balance = {} outside (0, 1)",
                self.group_balance
            ));
        }
        if !(self.topic_contrast >= 0.0 && self.topic_contrast.is_finite()) {
            return bad(format!("topic_contrast = {}", self.topic_contrast));
        }
        Ok(())
    }

    /// Drift progress of domain `t` (0-based): 0 for the first, 1 for the last.
    pub fn progress(&self, t: usize) -> f64 {
        t as f64 / (self.domains - 1) as f64
    }

    /// Prior the first domain draws labels from; decreasing in class index.
    pub fn base_prior(&self) -> Vec<f64> {
        normalized((0..self.classes).map(|c| (self.classes - c) as f64).collect())
    }

    /// Prior the label shift moves toward; the mirror of [`Self::base_prior`].
    pub fn shifted_prior(&self) -> Vec<f64> {
        normalized((0..self.classes).map(|c| (c + 1) as f64).collect())
    }

    /// Class prior used for domain `t` (0-based).
    pub fn domain_prior(&self, t: usize) -> Vec<f64> {
        let a = self.label_shift * self.progress(t);
        self.base_prior()
            .iter()
            .zip(self.shifted_prior())
            .map(|(b, s)| (1.0 - a) * b + a * s)
            .collect()
    }

    /// Token weight of the drifted distribution in domain `t` (0-based).
    pub fn drift_weight(&self, t: usize) -> f64 {
        self.token_drift * self.progress(t)
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Per-class token distributions of a generated corpus.
#[derive(Debug, Clone)]
pub struct TokenModel {
    /// `base[c]` and `drift[c]` are distributions over the vocabulary.
    pub base: Vec<Vec<f64>>,
    pub drift: Vec<Vec<f64>>,
}

impl TokenModel {
    /// Vocabulary layout: the first half is background words shared by all
    /// classes, the second half is split into a base topic pool and a drift
    /// topic pool. Background words follow a Zipf law whose rank order is
    /// reversed under drift; topic words get random per-class log-normal
    /// weights, so classes overlap but differ in emphasis.
    pub fn build<R: Rng>(cfg: &DriftConfig, rng: &mut R) -> Self {
        let v = cfg.vocab_size;
        let n_background = v / 2;
        let pool = (v - n_background) / 2;
        let base_pool = n_background..n_background + pool;
        let drift_start = n_background + ((1.0 - cfg.topic_overlap) * pool as f64).round() as usize;
        let drift_pool = drift_start..drift_start + pool;

        let zipf: Vec<f64> = normalized((0..n_background).map(|r| 1.0 / (r + 1) as f64).collect());
        let mut topics = Vec::with_capacity(cfg.classes);
        for _ in 0..cfg.classes {
            let mut topic_weights = |range: std::ops::Range<usize>| -> Vec<f64> {
                normalized(
                    range
                        .map(|_| {
                            let z: f64 = rng.sample(StandardNormal);
                            (cfg.topic_contrast * z).exp()
                        })
                        .collect(),
                )
            };
            let base_topic = topic_weights(base_pool.clone());
            let drift_topic = topic_weights(drift_pool.clone());
            topics.push((base_topic, drift_topic));
        }

        let mut base = Vec::with_capacity(cfg.classes);
        let mut drift = Vec::with_capacity(cfg.classes);
        for c in 0..cfg.classes {
            let base_topic = &topics[c].0;
            let rotated = &topics[(c + 1) % cfg.classes].0;
            let drift_topic: Vec<f64> = topics[c]
                .1
                .iter()
                .zip(rotated)
                .map(|(f, r)| (1.0 - cfg.topic_rotation) * f + cfg.topic_rotation * r)
                .collect();

            let mut b = vec![0.0; v];
            let mut d = vec![0.0; v];
            for r in 0..n_background {
                b[r] = (1.0 - cfg.topic_share) * zipf[r];
                d[n_background - 1 - r] = (1.0 - cfg.topic_share) * zipf[r];
            }
            for (i, w) in base_pool.clone().zip(base_topic) {
                b[i] = cfg.topic_share * w;
            }
            for (i, w) in drift_pool.clone().zip(&drift_topic) {
                d[i] = cfg.topic_share * w;
            }
            base.push(b);
            drift.push(d);
        }
        TokenModel { base, drift }
    }

    /// Token distribution of class `c` at drift weight `w`.
    pub fn mixture(&self, c: usize, w: f64) -> Vec<f64> {
        self.base[c]
            .iter()
            .zip(&self.drift[c])
            .map(|(b, d)| (1.0 - w) * b + w * d)
            .collect()
    }
}

pub fn token_name(i: usize) -> String {
    format!("w{i}")
}

/// Generates a corpus whose token and label distributions drift linearly
/// from the first to the last domain.
pub fn generate_drift_corpus(cfg: &DriftConfig) -> Result<TemporalCorpus> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_GENERATOR);
    let model = TokenModel::build(cfg, &mut rng);
    let vocab: Vec<String> = (0..cfg.vocab_size).map(token_name).collect();
    let mut domains = Vec::with_capacity(cfg.domains);
    for t in 0..cfg.domains {
        let w = cfg.drift_weight(t);
        let samplers: Vec<WeightedIndex<f64>> = (0..cfg.classes)
            .map(|c| WeightedIndex::new(model.mixture(c, w)).expect("valid token weights"))
            .collect();
        let prior = WeightedIndex::new(cfg.domain_prior(t)).expect("valid prior");
        let timestamp = cfg.first_timestamp + t as i64;
        let documents = (0..cfg.docs_per_domain)
            .map(|i| {
                let label = prior.sample(&mut rng);
                let len = rng.gen_range(cfg.min_len..=cfg.max_len);
                let tokens = (0..len)
                    .map(|_| vocab[samplers[label].sample(&mut rng)].clone())
                    .collect();
                let group = if rng.gen_bool(cfg.group_balance) {
                    GROUP_NAMES[0]
                } else {
                    GROUP_NAMES[1]
                };
                Document {
                    id: format!("t{}-{i:05}", t + 1),
                    tokens,
                    label,
                    timestamp,
                    group: group.to_string(),
                    language: "syn".to_string(),
                }
            })
            .collect();
        domains.push(TimeDomain {
            index: t + 1,
            start: timestamp,
            end: timestamp + 1,
            documents,
        });
    }
    let mut groups: Vec<String> = GROUP_NAMES.iter().map(|s| s.to_string()).collect();
    groups.sort();
    Ok(TemporalCorpus {
        domains,
        classes: cfg.classes,
        groups,
    })
}

/// Parses the tab-separated corpus format. Documents with fewer than
/// `min_tokens` tokens are dropped.
pub fn parse_corpus(text: &str, path: &Path, min_tokens: usize) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let err = |message: String| MoteError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 tab-separated fields, found {}", fields.len())));
        }
        let timestamp = fields[1]
            .parse::<i64>()
            .map_err(|e| err(format!("bad timestamp `{}`: {e}", fields[1])))?;
        let label = fields[2]
            .parse::<usize>()
            .map_err(|e| err(format!("bad label `{}`: {e}", fields[2])))?;
        if fields[0].is_empty() {
            return Err(err("empty document id".into()));
        }
        let tokens: Vec<String> = fields[5].split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(err("document has no tokens".into()));
        }
        if tokens.len() < min_tokens {
            continue;
        }
        docs.push(Document {
            id: fields[0].to_string(),
            tokens,
            label,
            timestamp,
            group: fields[3].to_string(),
            language: fields[4].to_string(),
        });
    }
    Ok(docs)
}

pub fn load_corpus_file(path: &Path, min_tokens: usize) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MoteError::io(format!("reading corpus {}", path.display()), e))?;
    parse_corpus(&text, path, min_tokens)
}

pub fn format_corpus<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    let mut out = String::from("# id\ttimestamp\tlabel\tgroup\tlanguage\ttokens\n");
    for d in docs {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            d.id,
            d.timestamp,
            d.label,
            d.group,
            d.language,
            d.tokens.join(" ")
        );
    }
    out
}

pub fn write_corpus_file(path: &Path, corpus: &TemporalCorpus) -> Result<()> {
    let text = format_corpus(corpus.domains.iter().flat_map(|d| &d.documents));
    std::fs::write(path, text)
        .map_err(|e| MoteError::io(format!("writing corpus {}", path.display()), e))
}
