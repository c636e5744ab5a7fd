//! Flat `key=value` experiment configuration with dotted section prefixes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::{ModelDims, SourceTrainConfig};
use crate::corpus::DriftConfig;
use crate::error::{MoteError, Result};
use crate::metrics::MetricKind;
use crate::mote::{Ablation, MoteConfig, TrainConfig};
use crate::numerics::OptimizerConfig;
use crate::temporal_router::GatingMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    TemporalEffect,
    AdaptCompare,
    Ablation,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::TemporalEffect => "temporal-effect",
            ExperimentKind::AdaptCompare => "adapt-compare",
            ExperimentKind::Ablation => "ablation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "temporal-effect" => Some(ExperimentKind::TemporalEffect),
            "adapt-compare" => Some(ExperimentKind::AdaptCompare),
            "ablation" => Some(ExperimentKind::Ablation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Generate(DriftConfig),
    Load {
        path: PathBuf,
        /// Half-open time-domain boundaries `b_0 < b_1 < ... < b_T`.
        boundaries: Vec<i64>,
        min_tokens: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub metrics: Vec<MetricKind>,
    pub out: PathBuf,
    pub corpus: CorpusSource,
    pub downsample: bool,
    /// Seed of downsampling and every train/test split; fixed across
    /// training seeds so comparisons stay paired.
    pub split_seed: u64,
    pub train_ratio: f64,
    pub target_test_ratio: f64,
    pub dims: ModelDims,
    /// `mote.T`; `None` means one expert per source time domain.
    pub experts: Option<usize>,
    pub mote: MoteConfig,
    pub train: TrainConfig,
    pub source: SourceTrainConfig,
    pub checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::AdaptCompare,
            seeds: vec![41, 42, 43],
            metrics: MetricKind::ALL.to_vec(),
            out: PathBuf::from("out"),
            corpus: CorpusSource::Generate(DriftConfig::default()),
            downsample: true,
            split_seed: 1,
            train_ratio: 0.7,
            target_test_ratio: 0.2,
            dims: ModelDims::default(),
            experts: None,
            mote: MoteConfig::default(),
            train: TrainConfig::default(),
            source: SourceTrainConfig::default(),
            checkpoints: true,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| MoteError::config(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn lr(key: &str, value: &str, opt: &mut OptimizerConfig) -> Result<()> {
    opt.learning_rate = parse_value(key, value)?;
    Ok(())
}

impl ExperimentConfig {
    pub fn drift(&self) -> Option<&DriftConfig> {
        match &self.corpus {
            CorpusSource::Generate(d) => Some(d),
            CorpusSource::Load { .. } => None,
        }
    }

    fn drift_mut(&mut self, key: &str) -> Result<&mut DriftConfig> {
        match &mut self.corpus {
            CorpusSource::Generate(d) => Ok(d),
            CorpusSource::Load { .. } => Err(MoteError::config(
                key,
                "generator settings require corpus.source=generate",
            )),
        }
    }

    fn set(&mut self, key: &str, value: &str, loaded: &mut LoadFields) -> Result<()> {
        match key {
            "experiment.kind" => {
                self.kind = ExperimentKind::parse(value).ok_or_else(|| {
                    MoteError::config(
                        key,
                        format!("{value:?} is not temporal-effect, adapt-compare or ablation"),
                    )
                })?
            }
            "experiment.seeds" => self.seeds = parse_list(key, value)?,
            "experiment.metrics" => {
                self.metrics = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        MetricKind::parse(s)
                            .ok_or_else(|| MoteError::config(key, format!("unknown metric {s:?}")))
                    })
                    .collect::<Result<_>>()?
            }
            "experiment.out" => self.out = PathBuf::from(value),
            "experiment.checkpoints" => self.checkpoints = parse_value(key, value)?,
            "corpus.source" => match value {
                "generate" => {
                    if !matches!(self.corpus, CorpusSource::Generate(_)) {
                        self.corpus = CorpusSource::Generate(DriftConfig::default());
                    }
                }
                "load" => loaded.requested = true,
                other => {
                    return Err(MoteError::config(
                        key,
                        format!("{other:?} is neither generate nor load"),
                    ))
                }
            },
            "corpus.path" => loaded.path = Some(PathBuf::from(value)),
            "corpus.boundaries" => loaded.boundaries = Some(parse_list(key, value)?),
            "corpus.min_tokens" => loaded.min_tokens = parse_value(key, value)?,
            "corpus.downsample" => self.downsample = parse_value(key, value)?,
            "corpus.split_seed" => self.split_seed = parse_value(key, value)?,
            "corpus.train_ratio" => self.train_ratio = parse_value(key, value)?,
            "corpus.target_test_ratio" => self.target_test_ratio = parse_value(key, value)?,
            "drift.vocab_size" => self.drift_mut(key)?.vocab_size = parse_value(key, value)?,
            "drift.classes" => self.drift_mut(key)?.classes = parse_value(key, value)?,
            "drift.domains" => self.drift_mut(key)?.domains = parse_value(key, value)?,
            "drift.docs_per_domain" => {
                self.drift_mut(key)?.docs_per_domain = parse_value(key, value)?
            }
            "drift.min_len" => self.drift_mut(key)?.min_len = parse_value(key, value)?,
            "drift.max_len" => self.drift_mut(key)?.max_len = parse_value(key, value)?,
            "drift.token_drift" => self.drift_mut(key)?.token_drift = parse_value(key, value)?,
            "drift.label_shift" => self.drift_mut(key)?.label_shift = parse_value(key, value)?,
            "drift.group_balance" => self.drift_mut(key)?.group_balance = parse_value(key, value)?,
            "drift.topic_share" => self.drift_mut(key)?.topic_share = parse_value(key, value)?,
            "drift.topic_contrast" => {
                self.drift_mut(key)?.topic_contrast = parse_value(key, value)?
            }
            "drift.topic_overlap" => self.drift_mut(key)?.topic_overlap = parse_value(key, value)?,
            "drift.topic_rotation" => self.drift_mut(key)?.topic_rotation = parse_value(key, value)?,
            "drift.first_timestamp" => {
                self.drift_mut(key)?.first_timestamp = parse_value(key, value)?
            }
            "drift.seed" => self.drift_mut(key)?.seed = parse_value(key, value)?,
            "model.d" => self.dims.dim = parse_value(key, value)?,
            "model.d_emb" => self.dims.emb_dim = parse_value(key, value)?,
            "model.buckets" => self.dims.buckets = parse_value(key, value)?,
            "model.d_hidden" => {
                self.dims.hidden = parse_value(key, value)?;
                self.mote.hidden = self.dims.hidden;
            }
            "mote.T" => self.experts = Some(parse_value(key, value)?),
            "mote.K" => self.mote.top_k = parse_value(key, value)?,
            "mote.lambda" => self.mote.lambda = parse_value(key, value)?,
            "mote.raw_gating" => {
                self.mote.mode = if parse_value(key, value)? {
                    GatingMode::RawSoftmax
                } else {
                    GatingMode::Renormalized
                }
            }
            "mote.unfreeze_encoder" => self.train.unfreeze_encoder = parse_value(key, value)?,
            "train.warmup_epochs" => self.train.warmup_epochs = parse_value(key, value)?,
            "train.adapt_epochs" => self.train.adapt_epochs = parse_value(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_value(key, value)?,
            "train.router_lr" => lr(key, value, &mut self.train.router_opt)?,
            "train.expert_lr" => lr(key, value, &mut self.train.expert_opt)?,
            "train.weight_decay" => {
                let wd = parse_value(key, value)?;
                self.train.router_opt.weight_decay = wd;
                self.train.expert_opt.weight_decay = wd;
            }
            "train.no_warmup" => self.train.ablation.no_warmup = parse_value(key, value)?,
            "train.no_router" => self.train.ablation.no_router = parse_value(key, value)?,
            "train.no_evaluator" => self.train.ablation.no_evaluator = parse_value(key, value)?,
            "source.epochs" => self.source.epochs = parse_value(key, value)?,
            "source.lr" => lr(key, value, &mut self.source.optimizer)?,
            "source.batch_size" => self.source.batch_size = parse_value(key, value)?,
            "source.validation_fraction" => {
                self.source.validation_fraction = parse_value(key, value)?
            }
            "source.patience" => self.source.patience = parse_value(key, value)?,
            "source.weight_decay" => self.source.optimizer.weight_decay = parse_value(key, value)?,
            _ => return Err(MoteError::config(key, "unknown configuration key")),
        }
        Ok(())
    }

    /// Cross-field checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(MoteError::config("experiment.seeds", "at least one seed is required"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(MoteError::config("corpus.train_ratio", "must lie strictly in (0, 1)"));
        }
        if !(self.target_test_ratio > 0.0 && self.target_test_ratio < 1.0) {
            return Err(MoteError::config(
                "corpus.target_test_ratio",
                "must lie strictly in (0, 1)",
            ));
        }
        for (key, v) in [
            ("model.d", self.dims.dim),
            ("model.d_emb", self.dims.emb_dim),
            ("model.buckets", self.dims.buckets),
            ("model.d_hidden", self.dims.hidden),
            ("train.batch_size", self.train.batch_size),
            ("source.batch_size", self.source.batch_size),
        ] {
            if v == 0 {
                return Err(MoteError::config(key, "must be positive"));
            }
        }
        if let Some(t) = self.experts {
            if t == 0 {
                return Err(MoteError::config("mote.T", "must be positive"));
            }
            if self.mote.top_k > t {
                return Err(MoteError::config(
                    "mote.K",
                    format!("top-k {} exceeds expert count {t}", self.mote.top_k),
                ));
            }
        }
        if self.mote.top_k == 0 {
            return Err(MoteError::config("mote.K", "must be positive"));
        }
        if !(self.mote.lambda >= 0.0 && self.mote.lambda.is_finite()) {
            return Err(MoteError::config("mote.lambda", "must be finite and non-negative"));
        }
        for (key, opt) in [
            ("train.router_lr", &self.train.router_opt),
            ("train.expert_lr", &self.train.expert_opt),
            ("source.lr", &self.source.optimizer),
        ] {
            opt.validate().map_err(|e| MoteError::config(key, e.to_string()))?;
        }
        match &self.corpus {
            CorpusSource::Generate(d) => d
                .validate()
                .map_err(|e| MoteError::config("drift", e.to_string()))?,
            CorpusSource::Load { boundaries, .. } => {
                if boundaries.len() < 3 {
                    return Err(MoteError::config(
                        "corpus.boundaries",
                        "need at least three boundaries (two time domains)",
                    ));
                }
                if boundaries.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(MoteError::config(
                        "corpus.boundaries",
                        "boundaries must be strictly increasing",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical listing of every effective setting.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        line("experiment.kind", self.kind.as_str().into());
        line("experiment.seeds", join(&self.seeds));
        line(
            "experiment.metrics",
            self.metrics.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
        );
        line("experiment.out", self.out.display().to_string());
        line("experiment.checkpoints", self.checkpoints.to_string());
        match &self.corpus {
            CorpusSource::Generate(d) => {
                line("corpus.source", "generate".into());
                line("drift.vocab_size", d.vocab_size.to_string());
                line("drift.classes", d.classes.to_string());
                line("drift.domains", d.domains.to_string());
                line("drift.docs_per_domain", d.docs_per_domain.to_string());
                line("drift.min_len", d.min_len.to_string());
                line("drift.max_len", d.max_len.to_string());
                line("drift.token_drift", d.token_drift.to_string());
                line("drift.label_shift", d.label_shift.to_string());
                line("drift.group_balance", d.group_balance.to_string());
                line("drift.topic_share", d.topic_share.to_string());
                line("drift.topic_contrast", d.topic_contrast.to_string());
                line("drift.topic_overlap", d.topic_overlap.to_string());
                line("drift.topic_rotation", d.topic_rotation.to_string());
                line("drift.first_timestamp", d.first_timestamp.to_string());
                line("drift.seed", d.seed.to_string());
            }
            CorpusSource::Load {
                path,
                boundaries,
                min_tokens,
            } => {
                line("corpus.source", "load".into());
                line("corpus.path", path.display().to_string());
                line(
                    "corpus.boundaries",
                    boundaries.iter().map(i64::to_string).collect::<Vec<_>>().join(","),
                );
                line("corpus.min_tokens", min_tokens.to_string());
            }
        }
        line("corpus.downsample", self.downsample.to_string());
        line("corpus.split_seed", self.split_seed.to_string());
        line("corpus.train_ratio", self.train_ratio.to_string());
        line("corpus.target_test_ratio", self.target_test_ratio.to_string());
        line("model.d", self.dims.dim.to_string());
        line("model.d_emb", self.dims.emb_dim.to_string());
        line("model.buckets", self.dims.buckets.to_string());
        line("model.d_hidden", self.dims.hidden.to_string());
        line(
            "mote.T",
            self.experts.map_or("auto".into(), |t| t.to_string()),
        );
        line("mote.K", self.mote.top_k.to_string());
        line("mote.lambda", self.mote.lambda.to_string());
        line(
            "mote.raw_gating",
            (self.mote.mode == GatingMode::RawSoftmax).to_string(),
        );
        line("mote.unfreeze_encoder", self.train.unfreeze_encoder.to_string());
        line("train.warmup_epochs", self.train.warmup_epochs.to_string());
        line("train.adapt_epochs", self.train.adapt_epochs.to_string());
        line("train.batch_size", self.train.batch_size.to_string());
        line("train.router_lr", self.train.router_opt.learning_rate.to_string());
        line("train.expert_lr", self.train.expert_opt.learning_rate.to_string());
        line("train.weight_decay", self.train.expert_opt.weight_decay.to_string());
        let Ablation {
            no_warmup,
            no_router,
            no_evaluator,
        } = self.train.ablation;
        line("train.no_warmup", no_warmup.to_string());
        line("train.no_router", no_router.to_string());
        line("train.no_evaluator", no_evaluator.to_string());
        line("source.epochs", self.source.epochs.to_string());
        line("source.lr", self.source.optimizer.learning_rate.to_string());
        line("source.batch_size", self.source.batch_size.to_string());
        line("source.validation_fraction", self.source.validation_fraction.to_string());
        line("source.patience", self.source.patience.to_string());
        line("source.weight_decay", self.source.optimizer.weight_decay.to_string());
        s
    }
}

#[derive(Default)]
struct LoadFields {
    requested: bool,
    path: Option<PathBuf>,
    boundaries: Option<Vec<i64>>,
    min_tokens: usize,
}

/// Parses configuration text. `experiment.kind` is required; every other key
/// falls back to its default. Unknown keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            MoteError::config(format!("line {}", n + 1), format!("expected key=value, got {line:?}"))
        })?;
        let key = key.trim();
        if entries.insert(key, (n + 1, value.trim())).is_some() {
            return Err(MoteError::config(key, "key given more than once"));
        }
    }
    if !entries.contains_key("experiment.kind") {
        return Err(MoteError::config("experiment.kind", "required key is missing"));
    }
    let mut cfg = ExperimentConfig::default();
    let mut loaded = LoadFields {
        min_tokens: 10,
        ..LoadFields::default()
    };
    // Corpus source first so generator keys know where they belong.
    if let Some((_, v)) = entries.get("corpus.source") {
        cfg.set("corpus.source", v, &mut loaded)?;
    }
    if loaded.requested {
        cfg.corpus = CorpusSource::Load {
            path: PathBuf::new(),
            boundaries: Vec::new(),
            min_tokens: 10,
        };
    }
    for (key, (_, value)) in &entries {
        if *key != "corpus.source" {
            cfg.set(key, value, &mut loaded)?;
        }
    }
    match &mut cfg.corpus {
        CorpusSource::Load {
            path,
            boundaries,
            min_tokens,
        } => {
            *path = loaded
                .path
                .ok_or_else(|| MoteError::config("corpus.path", "required when corpus.source=load"))?;
            *boundaries = loaded.boundaries.ok_or_else(|| {
                MoteError::config("corpus.boundaries", "required when corpus.source=load")
            })?;
            *min_tokens = loaded.min_tokens;
        }
        CorpusSource::Generate(_) => {
            for key in ["corpus.path", "corpus.boundaries", "corpus.min_tokens"] {
                if entries.contains_key(key) {
                    return Err(MoteError::config(key, "only valid with corpus.source=load"));
                }
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MoteError::io(format!("reading config {}", path.display()), e))?;
    let mut cfg = parse_config(&text)?;
    // Relative corpus paths resolve against the config file's directory.
    if let CorpusSource::Load { path: corpus, .. } = &mut cfg.corpus {
        if corpus.is_relative() {
            if let Some(dir) = path.parent() {
                *corpus = dir.join(&*corpus);
            }
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse_config("experiment.kind=ablation\n").unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Ablation);
        assert_eq!(cfg.seeds, vec![41, 42, 43]);
        assert_eq!(cfg.mote.top_k, 2);
        assert_eq!(cfg.mote.lambda, 0.01);
        assert_eq!(cfg.train.warmup_epochs, 20);
        assert_eq!(cfg.train.adapt_epochs, 20);
        assert_eq!(cfg.train.router_opt.learning_rate, 1e-4);
        assert_eq!(cfg.split_seed, 1);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("experiment.kind=ablation\nmote.Q=3\n").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("mote.Q"), "{err}");
    }

    #[test]
    fn field_errors_carry_the_key() {
        for (text, key) in [
            ("experiment.kind=adapt-compare\nmote.T=2\nmote.K=3", "mote.K"),
            ("experiment.kind=adapt-compare\ntrain.batch_size=0", "train.batch_size"),
            ("experiment.kind=nope", "experiment.kind"),
            ("drift.seed=3", "experiment.kind"),
            ("experiment.kind=ablation\nmodel.d=abc", "model.d"),
            ("experiment.kind=ablation\ncorpus.source=load", "corpus.path"),
            ("experiment.kind=ablation\ncorpus.boundaries=1,2", "corpus.boundaries"),
        ] {
            let err = parse_config(text).unwrap_err();
            assert!(err.is_config(), "{text}");
            assert!(err.to_string().contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config(
            "# comment\nexperiment.kind=temporal-effect\nexperiment.seeds=7, 8\n\
             drift.token_drift=0.25\nmote.T=4\ntrain.expert_lr=0.003\n",
        )
        .unwrap();
        let text = cfg.echo().replace("mote.T=auto\n", "");
        assert_eq!(parse_config(&text).unwrap(), cfg);

        let load = parse_config(
            "experiment.kind=adapt-compare\ncorpus.source=load\ncorpus.path=data.tsv\n\
             corpus.boundaries=2010,2011,2012\ncorpus.min_tokens=5\n",
        )
        .unwrap();
        assert_eq!(parse_config(&load.echo().replace("mote.T=auto\n", "")).unwrap(), load);
    }
}
