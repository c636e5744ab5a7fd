//! Model checkpoints: a directory of plain-text matrix dumps plus a
//! `manifest.txt` of `key=value` lines.
//!
//! A matrix file starts with a `rows cols` line followed by one
//! whitespace-separated row per line. Values use the shortest decimal form
//! that parses back to the same `f64`, so save/load is lossless.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::baselines::SourceModel;
use crate::encoder::{EncoderParams, Nonlinearity};
use crate::error::{MoteError, Result};
use crate::experts::ExpertParams;
use crate::mote::{Ablation, MoteModel};
use crate::numerics::{Matrix, Parameter};
use crate::shift_evaluator::ClusterModel;
use crate::temporal_router::{GatingMode, RouterParams};

pub const MANIFEST: &str = "manifest.txt";

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<Matrix> {
    let err = |line: usize, message: String| MoteError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "missing shape line".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| err(1, format!("bad dimension `{s}`"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(err(1, "expected `rows cols`".into()));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| err(i + 2, format!("expected {rows} rows, found {i}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|_| err(i + 2, format!("bad number `{tok}`")))?,
            );
        }
        if data.len() - before != cols {
            return Err(err(i + 2, format!("expected {cols} values, found {}", data.len() - before)));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(err(rows + 2, "trailing data after last row".into()));
    }
    Matrix::from_vec(rows, cols, data)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| MoteError::io(format!("writing {}", path.display()), e))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| MoteError::io(format!("reading {}", path.display()), e))
}

fn write_matrix(dir: &Path, name: &str, m: &Matrix) -> Result<()> {
    write(dir, &format!("{name}.txt"), &format_matrix(m))
}

fn read_param(dir: &Path, name: &str, shape: (usize, usize)) -> Result<Parameter> {
    let file = format!("{name}.txt");
    let m = parse_matrix(&read(dir, &file)?, &dir.join(&file))?;
    if m.shape() != shape {
        return Err(MoteError::InvalidArgument(format!(
            "{}: shape {:?}, manifest implies {:?}",
            dir.join(file).display(),
            m.shape(),
            shape
        )));
    }
    Ok(Parameter::new(m))
}

/// Parsed manifest with typed accessors that name the offending key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| MoteError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: "expected key=value".into(),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Manifest { entries })
    }

    pub fn format(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| MoteError::config(format!("manifest.{key}"), "missing"))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| MoteError::config(format!("manifest.{key}"), format!("cannot parse `{raw}`")))
    }
}

fn encoder_manifest(m: &mut Manifest, enc: &EncoderParams) {
    m.set("d", enc.dim());
    m.set("d_emb", enc.emb_dim());
    m.set("buckets", enc.buckets());
    m.set("nonlinearity", enc.nonlinearity.as_str());
}

fn save_encoder(dir: &Path, enc: &EncoderParams) -> Result<()> {
    write_matrix(dir, "encoder.embedding", &enc.embedding.value)?;
    write_matrix(dir, "encoder.projection", &enc.projection.value)?;
    write_matrix(dir, "encoder.bias", &enc.bias.value)
}

fn load_encoder(dir: &Path, m: &Manifest) -> Result<EncoderParams> {
    let (d, e, b): (usize, usize, usize) = (m.get("d")?, m.get("d_emb")?, m.get("buckets")?);
    let nl = m.raw("nonlinearity")?;
    let nonlinearity = Nonlinearity::parse(nl)
        .ok_or_else(|| MoteError::config("manifest.nonlinearity", format!("unknown `{nl}`")))?;
    Ok(EncoderParams {
        embedding: read_param(dir, "encoder.embedding", (b, e))?,
        projection: read_param(dir, "encoder.projection", (e, d))?,
        bias: read_param(dir, "encoder.bias", (1, d))?,
        nonlinearity,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MoteError::io(format!("creating {}", dir.display()), e))
}

fn read_manifest(dir: &Path, kind: &str) -> Result<Manifest> {
    let m = Manifest::parse(&read(dir, MANIFEST)?, &dir.join(MANIFEST))?;
    let found = m.raw("kind")?;
    if found != kind {
        return Err(MoteError::InvalidArgument(format!(
            "{}: checkpoint kind is `{found}`, expected `{kind}`",
            dir.display()
        )));
    }
    Ok(m)
}

/// Kind of checkpoint stored in `dir` (`source` or `mote`).
pub fn checkpoint_kind(dir: &Path) -> Result<String> {
    let m = Manifest::parse(&read(dir, MANIFEST)?, &dir.join(MANIFEST))?;
    Ok(m.raw("kind")?.to_string())
}

pub fn save_source(model: &SourceModel, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let mut m = Manifest::default();
    m.set("kind", "source");
    m.set("C", model.classes());
    encoder_manifest(&mut m, &model.encoder);
    let provenance: Vec<String> = model.provenance.iter().map(|p| p.to_string()).collect();
    m.set("provenance", provenance.join(","));
    save_encoder(dir, &model.encoder)?;
    write_matrix(dir, "head.w", &model.head_w.value)?;
    write_matrix(dir, "head.b", &model.head_b.value)?;
    write(dir, MANIFEST, &m.format())
}

pub fn load_source(dir: &Path) -> Result<SourceModel> {
    let m = read_manifest(dir, "source")?;
    let encoder = load_encoder(dir, &m)?;
    let (d, c): (usize, usize) = (m.get("d")?, m.get("C")?);
    let provenance = m
        .raw("provenance")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| MoteError::config("manifest.provenance", format!("bad index `{s}`")))
        })
        .collect::<Result<_>>()?;
    Ok(SourceModel {
        encoder,
        head_w: read_param(dir, "head.w", (d, c))?,
        head_b: read_param(dir, "head.b", (1, c))?,
        provenance,
        loss_trace: Vec::new(),
    })
}

const EXPERT_PARTS: [&str; 6] = ["w1", "b1", "w2", "b2", "wc", "bc"];

pub fn save_mote(model: &MoteModel, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let t = model.experts.len();
    let mut m = Manifest::default();
    m.set("kind", "mote");
    m.set("T", t);
    m.set("K", model.top_k);
    m.set("lambda", model.lambda);
    m.set("C", model.classes);
    m.set("d_hidden", model.experts.first().map_or(0, ExpertParams::hidden));
    m.set(
        "gating",
        match model.mode {
            GatingMode::Renormalized => "renormalized",
            GatingMode::RawSoftmax => "raw_softmax",
        },
    );
    m.set("no_warmup", model.ablation.no_warmup);
    m.set("no_router", model.ablation.no_router);
    m.set("no_evaluator", model.ablation.no_evaluator);
    m.set("dispatch_seed", model.dispatch_seed);
    encoder_manifest(&mut m, &model.encoder);

    save_encoder(dir, &model.encoder)?;
    write_matrix(dir, "centroids", &Matrix::from_rows(&model.clusters.centroids)?)?;
    write_matrix(dir, "router.gate", &model.router.gate.value)?;
    for (j, e) in model.experts.iter().enumerate() {
        for (part, p) in EXPERT_PARTS.iter().zip(e.params()) {
            write_matrix(dir, &format!("expert{j}.{part}"), &p.value)?;
        }
    }
    write(dir, MANIFEST, &m.format())
}

pub fn load_mote(dir: &Path) -> Result<MoteModel> {
    let m = read_manifest(dir, "mote")?;
    let encoder = load_encoder(dir, &m)?;
    let (t, k, c, d, h): (usize, usize, usize, usize, usize) =
        (m.get("T")?, m.get("K")?, m.get("C")?, m.get("d")?, m.get("d_hidden")?);
    if k == 0 || k > t {
        return Err(MoteError::config("manifest.K", format!("K = {k} must be in 1..={t}")));
    }
    let mode = match m.raw("gating")? {
        "renormalized" => GatingMode::Renormalized,
        "raw_softmax" => GatingMode::RawSoftmax,
        other => return Err(MoteError::config("manifest.gating", format!("unknown `{other}`"))),
    };
    let centroids = read_param(dir, "centroids", (t, d))?.value;
    let centroids = (0..t).map(|j| centroids.row(j).to_vec()).collect();
    let router = RouterParams {
        gate: read_param(dir, "router.gate", (d, t))?,
    };
    let shapes = [(d, h), (1, h), (h, d), (1, d), (2 * d, c), (1, c)];
    let mut experts = Vec::with_capacity(t);
    for j in 0..t {
        let mut e = ExpertParams::zeros(d, h, c);
        for ((part, shape), p) in EXPERT_PARTS.iter().zip(shapes).zip(e.params_mut()) {
            *p = read_param(dir, &format!("expert{j}.{part}"), shape)?;
        }
        experts.push(e);
    }
    Ok(MoteModel {
        encoder,
        clusters: ClusterModel::from_centroids(centroids),
        router,
        experts,
        top_k: k,
        lambda: m.get("lambda")?,
        classes: c,
        mode,
        ablation: Ablation {
            no_warmup: m.get("no_warmup")?,
            no_router: m.get("no_router")?,
            no_evaluator: m.get("no_evaluator")?,
        },
        dispatch_seed: m.get("dispatch_seed")?,
        warmup_trace: Vec::new(),
        loss_trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{train_source, ModelDims, SourceTrainConfig};
    use crate::classify::Classifier;
    use crate::corpus::{generate_drift_corpus, DriftConfig};
    use crate::mote::{train_mote, MoteConfig, TrainConfig};
    use crate::numerics::OptimizerConfig;

    fn small() -> (Vec<crate::corpus::Document>, SourceModel) {
        let corpus = generate_drift_corpus(&DriftConfig {
            vocab_size: 300,
            docs_per_domain: 40,
            ..DriftConfig::default()
        })
        .unwrap();
        let docs: Vec<_> = corpus.domains.iter().flat_map(|d| d.documents.clone()).collect();
        let dims = ModelDims { dim: 6, emb_dim: 5, buckets: 64, hidden: 7 };
        let cfg = SourceTrainConfig {
            epochs: 2,
            optimizer: OptimizerConfig::with_lr(0.01),
            ..SourceTrainConfig::default()
        };
        let src = train_source(&docs, corpus.classes, &dims, &cfg, vec![1, 2]).unwrap();
        (docs, src)
    }

    #[test]
    fn matrix_text_is_lossless() {
        let m = Matrix::from_vec(2, 3, vec![0.1, -1e-300, 1.0 / 3.0, f64::MIN_POSITIVE, 12345.678, -0.0]).unwrap();
        let back = parse_matrix(&format_matrix(&m), Path::new("m")).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_matrix_names_line() {
        let e = parse_matrix("2 2\n1 2\n3\n", Path::new("bad.txt")).unwrap_err();
        assert!(e.to_string().contains("bad.txt:3"), "{e}");
        assert!(parse_matrix("2 x\n", Path::new("m")).is_err());
        assert!(parse_matrix("1 1\n1\n2\n", Path::new("m")).is_err());
    }

    #[test]
    fn source_round_trip() {
        let (docs, src) = small();
        let dir = tempfile::tempdir().unwrap();
        save_source(&src, dir.path()).unwrap();
        let back = load_source(dir.path()).unwrap();
        assert_eq!(back.provenance, vec![1, 2]);
        for d in &docs {
            assert_eq!(src.class_probs(d).unwrap(), back.class_probs(d).unwrap());
        }
        assert_eq!(checkpoint_kind(dir.path()).unwrap(), "source");
        assert!(load_mote(dir.path()).is_err());
    }

    #[test]
    fn mote_round_trip_with_manifest() {
        let (docs, src) = small();
        let mcfg = MoteConfig { experts: 3, hidden: 7, ..MoteConfig::default() };
        let tcfg = TrainConfig {
            warmup_epochs: 2,
            adapt_epochs: 2,
            ..TrainConfig::default()
        };
        let model = train_mote(&src, &docs, &mcfg, &tcfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_mote(&model, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        for line in ["T=3", "K=2", "lambda=0.01", "d=6", "C=3"] {
            assert!(manifest.lines().any(|l| l == line), "{line} missing from\n{manifest}");
        }
        let back = load_mote(dir.path()).unwrap();
        for d in &docs {
            assert_eq!(model.class_probs(d).unwrap(), back.class_probs(d).unwrap());
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (_, src) = small();
        let dir = tempfile::tempdir().unwrap();
        save_source(&src, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        fs::write(dir.path().join(MANIFEST), text.replace("C=3", "C=4")).unwrap();
        let e = load_source(dir.path()).unwrap_err();
        assert!(e.to_string().contains("head.w"), "{e}");
    }
}
