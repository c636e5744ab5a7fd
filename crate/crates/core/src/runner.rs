//! Experiment orchestration for the three experiment families.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{
    chronological_train, self_label_adapt, train_source, BaselineKind, SourceModel,
    SourceTrainConfig,
};
use crate::classify::{evaluate, Classifier};
use crate::config::{CorpusSource, ExperimentConfig, ExperimentKind};
use crate::corpus::{
    downsample_to_smallest, generate_drift_corpus, load_corpus_file, partition_by_time,
    split_train_test, Document, TemporalCorpus, UnlabeledDocument,
};
use crate::error::{MoteError, Result};
use crate::metrics::{
    compute_report, temporal_effect_matrix, MetricKind, MetricReport, TemporalEffectMatrix,
};
use crate::mote::{train_mote, Ablation, MoteConfig, MoteModel, TrainConfig};

/// One `(method, seed)` result row.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub seed: u64,
    pub report: MetricReport,
}

/// A trained model worth checkpointing.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Source(SourceModel),
    Mote(Box<MoteModel>),
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub rows: Vec<MethodRow>,
    pub matrices: Vec<TemporalEffectMatrix>,
    /// Metrics requested by the configuration, in column order.
    pub metrics: Vec<MetricKind>,
    pub config_echo: String,
    pub seeds: Vec<u64>,
    /// Wall-clock seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
    /// `(method, seed, model)` for checkpointing.
    pub models: Vec<(String, u64, TrainedModel)>,
}

impl RunReport {
    /// Seed-averaged report per method, in first-appearance order.
    pub fn method_means(&self) -> Vec<(String, MetricReport)> {
        let mut methods: Vec<String> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
        methods
            .into_iter()
            .map(|m| {
                let reports: Vec<MetricReport> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == m)
                    .map(|r| r.report.clone())
                    .collect();
                let mean = MetricReport::mean(&reports);
                (m, mean)
            })
            .collect()
    }

    pub fn mean_for(&self, method: &str) -> Option<MetricReport> {
        self.method_means()
            .into_iter()
            .find(|(m, _)| m == method)
            .map(|(_, r)| r)
    }
}

/// Builds the corpus described by the configuration, downsampled to the
/// smallest domain when requested.
pub fn prepare_corpus(cfg: &ExperimentConfig) -> Result<TemporalCorpus> {
    let corpus = match &cfg.corpus {
        CorpusSource::Generate(d) => generate_drift_corpus(d)?,
        CorpusSource::Load {
            path,
            boundaries,
            min_tokens,
        } => {
            let docs = load_corpus_file(path, *min_tokens)?;
            let classes = docs.iter().map(|d| d.label + 1).max().unwrap_or(0);
            partition_by_time(docs, boundaries, classes)?
        }
    };
    if corpus.domain_count() < 2 {
        return Err(MoteError::InvalidArgument(
            "need at least two time domains (sources plus target)".into(),
        ));
    }
    if cfg.downsample {
        downsample_to_smallest(&corpus, cfg.split_seed)
    } else {
        Ok(corpus)
    }
}

/// Paired data for adaptation experiments: labeled source domains, an
/// unlabeled target pool, and held-out labeled target test documents.
#[derive(Debug, Clone)]
pub struct AdaptSplit {
    pub source_domains: Vec<(usize, Vec<Document>)>,
    pub source_docs: Vec<Document>,
    pub pool: Vec<UnlabeledDocument>,
    pub test: Vec<Document>,
}

pub fn adapt_split(corpus: &TemporalCorpus, cfg: &ExperimentConfig) -> Result<AdaptSplit> {
    let source_domains: Vec<(usize, Vec<Document>)> = corpus
        .source_domains()
        .iter()
        .map(|d| (d.index, d.documents.clone()))
        .collect();
    let source_docs: Vec<Document> = source_domains.iter().flat_map(|(_, d)| d.clone()).collect();
    let (pool, test) = split_train_test(
        &corpus.target().documents,
        1.0 - cfg.target_test_ratio,
        cfg.split_seed,
    )?;
    Ok(AdaptSplit {
        source_domains,
        source_docs,
        pool: pool.iter().map(Document::without_label).collect(),
        test,
    })
}

fn seeded_source(cfg: &ExperimentConfig, seed: u64) -> SourceTrainConfig {
    SourceTrainConfig { seed, ..cfg.source }
}

fn seeded_train(cfg: &ExperimentConfig, seed: u64, ablation: Ablation) -> TrainConfig {
    TrainConfig {
        seed,
        ablation,
        ..cfg.train
    }
}

pub fn mote_config(cfg: &ExperimentConfig, split: &AdaptSplit) -> MoteConfig {
    MoteConfig {
        experts: cfg.experts.unwrap_or(split.source_domains.len()),
        hidden: cfg.dims.hidden,
        ..cfg.mote
    }
}

fn score<C: Classifier + ?Sized>(
    model: &C,
    test: &[Document],
    corpus: &TemporalCorpus,
) -> Result<MetricReport> {
    let records = evaluate(model, test, &corpus.groups)?;
    Ok(compute_report(&records, corpus.classes, corpus.groups.len()))
}

type SeedOutput = (Vec<MethodRow>, Vec<(String, u64, TrainedModel)>, Vec<(String, f64)>);

fn timed<T>(timings: &mut Vec<(String, f64)>, label: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(label.clone()))?;
    timings.push((label, start.elapsed().as_secs_f64()));
    Ok(out)
}

fn adapt_compare_seed(
    cfg: &ExperimentConfig,
    corpus: &TemporalCorpus,
    split: &AdaptSplit,
    seed: u64,
) -> Result<SeedOutput> {
    let scfg = seeded_source(cfg, seed);
    let mut t = Vec::new();
    let mut rows = Vec::new();
    let mut models = Vec::new();
    let sources: Vec<usize> = split.source_domains.iter().map(|(i, _)| *i).collect();

    let source = timed(&mut t, format!("source seed {seed}"), || {
        train_source(&split.source_docs, corpus.classes, &cfg.dims, &scfg, sources.clone())
    })?;
    rows.push(row(BaselineKind::SourceOnly.name(), seed, score(&source, &split.test, corpus)?));

    let selfl = timed(&mut t, format!("self-labeling seed {seed}"), || {
        self_label_adapt(&source, &split.source_docs, &split.pool, &cfg.dims, &scfg)
    })?;
    rows.push(row(BaselineKind::SelfLabeling.name(), seed, score(&selfl.model, &split.test, corpus)?));

    let chrono = timed(&mut t, format!("chronological seed {seed}"), || {
        chronological_train(&split.source_domains, corpus.classes, &cfg.dims, &scfg)
    })?;
    rows.push(row(BaselineKind::Chronological.name(), seed, score(&chrono, &split.test, corpus)?));

    let mcfg = mote_config(cfg, split);
    let ablation = cfg.train.ablation;
    let mote = timed(&mut t, format!("{} seed {seed}", ablation.method_name()), || {
        train_mote(&source, &split.source_docs, &mcfg, &seeded_train(cfg, seed, ablation))
    })?;
    rows.push(row(ablation.method_name(), seed, score(&mote, &split.test, corpus)?));

    models.push((BaselineKind::SourceOnly.name().into(), seed, TrainedModel::Source(source)));
    models.push((BaselineKind::SelfLabeling.name().into(), seed, TrainedModel::Source(selfl.model)));
    models.push((BaselineKind::Chronological.name().into(), seed, TrainedModel::Source(chrono)));
    models.push((ablation.method_name().into(), seed, TrainedModel::Mote(Box::new(mote))));
    Ok((rows, models, t))
}

/// The ablation variants, full model first.
pub const ABLATIONS: [Ablation; 4] = [
    Ablation::FULL,
    Ablation {
        no_warmup: true,
        no_router: false,
        no_evaluator: false,
    },
    Ablation {
        no_warmup: false,
        no_router: true,
        no_evaluator: false,
    },
    Ablation {
        no_warmup: false,
        no_router: false,
        no_evaluator: true,
    },
];

fn ablation_seed(
    cfg: &ExperimentConfig,
    corpus: &TemporalCorpus,
    split: &AdaptSplit,
    seed: u64,
) -> Result<SeedOutput> {
    let scfg = seeded_source(cfg, seed);
    let mut t = Vec::new();
    let mut rows = Vec::new();
    let mut models = Vec::new();
    let sources: Vec<usize> = split.source_domains.iter().map(|(i, _)| *i).collect();
    let source = timed(&mut t, format!("source seed {seed}"), || {
        train_source(&split.source_docs, corpus.classes, &cfg.dims, &scfg, sources)
    })?;
    let mcfg = mote_config(cfg, split);
    for ablation in ABLATIONS {
        let name = ablation.method_name();
        let model = timed(&mut t, format!("{name} seed {seed}"), || {
            train_mote(&source, &split.source_docs, &mcfg, &seeded_train(cfg, seed, ablation))
        })?;
        rows.push(row(name, seed, score(&model, &split.test, corpus)?));
        models.push((name.to_string(), seed, TrainedModel::Mote(Box::new(model))));
    }
    Ok((rows, models, t))
}

fn row(method: &str, seed: u64, report: MetricReport) -> MethodRow {
    MethodRow {
        method: method.to_string(),
        seed,
        report,
    }
}

/// Per-domain train/test splits, all drawn with the fixed split seed.
pub fn domain_splits(
    corpus: &TemporalCorpus,
    cfg: &ExperimentConfig,
) -> Result<Vec<(Vec<Document>, Vec<Document>)>> {
    corpus
        .domains
        .iter()
        .map(|d| {
            split_train_test(&d.documents, cfg.train_ratio, cfg.split_seed)
                .map_err(|e| e.in_stage(format!("splitting time domain {}", d.index)))
        })
        .collect()
}

/// Temporal-effect matrices: a source model per domain, evaluated on every
/// domain's test split.
pub fn run_temporal_effect(
    cfg: &ExperimentConfig,
    corpus: &TemporalCorpus,
) -> Result<Vec<TemporalEffectMatrix>> {
    let splits = domain_splits(corpus, cfg)?;
    temporal_effect_matrix(
        corpus.domain_count(),
        &cfg.seeds,
        &cfg.metrics,
        corpus.classes,
        corpus.groups.len(),
        |i, seed| {
            let model = train_source(
                &splits[i].0,
                corpus.classes,
                &cfg.dims,
                &seeded_source(cfg, seed),
                vec![corpus.domains[i].index],
            )?;
            splits
                .iter()
                .map(|(_, test)| evaluate(&model, test, &corpus.groups))
                .collect()
        },
    )
}

/// Runs one experiment on an already prepared corpus.
pub fn run_on_corpus(cfg: &ExperimentConfig, corpus: &TemporalCorpus) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = RunReport {
        kind: cfg.kind,
        rows: Vec::new(),
        matrices: Vec::new(),
        metrics: cfg.metrics.clone(),
        config_echo: cfg.echo(),
        seeds: cfg.seeds.clone(),
        timings: Vec::new(),
        models: Vec::new(),
    };
    let start = Instant::now();
    match cfg.kind {
        ExperimentKind::TemporalEffect => {
            report.matrices = run_temporal_effect(cfg, corpus)?;
            report
                .timings
                .push(("temporal effect".into(), start.elapsed().as_secs_f64()));
        }
        ExperimentKind::AdaptCompare | ExperimentKind::Ablation => {
            let split = adapt_split(corpus, cfg)?;
            let per_seed: Vec<SeedOutput> = cfg
                .seeds
                .par_iter()
                .map(|&seed| match cfg.kind {
                    ExperimentKind::Ablation => ablation_seed(cfg, corpus, &split, seed),
                    _ => adapt_compare_seed(cfg, corpus, &split, seed),
                })
                .collect::<Result<_>>()?;
            for (rows, models, timings) in per_seed {
                report.rows.extend(rows);
                report.models.extend(models);
                report.timings.extend(timings);
            }
        }
    }
    Ok(report)
}

/// Loads the configuration, builds the corpus and runs the experiment.
pub fn run_experiment(config_path: &Path) -> Result<RunReport> {
    let cfg = crate::config::load_config(config_path)?;
    run_config(&cfg)
}

pub fn run_config(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let corpus = prepare_corpus(cfg).map_err(|e| e.in_stage("preparing corpus"))?;
    let corpus_secs = start.elapsed().as_secs_f64();
    let mut report = run_on_corpus(cfg, &corpus)?;
    report.timings.insert(0, ("corpus".into(), corpus_secs));
    Ok(report)
}
