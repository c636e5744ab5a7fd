//! CSV and text emission for experiment results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{save_mote, save_source};
use crate::error::{MoteError, Result};
use crate::metrics::{MetricKind, TemporalEffectMatrix};
use crate::runner::{RunReport, TrainedModel};

pub const METRICS_HEADER: &str = "method,seed,f1_macro,f1_samples,auc_macro,fair";
pub const MATRIX_HEADER: &str = "metric,source_domain,target_domain,p_ij,delta";
pub const MEAN_SEED: &str = "mean";

fn decimal(x: f64) -> String {
    format!("{x:.6}")
}

/// Per-seed rows followed by one seed-averaged row per method. Columns for
/// metrics that were not requested are left empty; with no requested metric
/// only the header is written.
pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    if report.metrics.is_empty() {
        return out;
    }
    let mut line = |method: &str, seed: &str, get: &dyn Fn(MetricKind) -> f64| {
        let cells: Vec<String> = MetricKind::ALL
            .iter()
            .map(|&m| if report.metrics.contains(&m) { decimal(get(m)) } else { String::new() })
            .collect();
        let _ = writeln!(out, "{method},{seed},{}", cells.join(","));
    };
    for r in &report.rows {
        line(&r.method, &r.seed.to_string(), &|m| r.report.get(m));
    }
    for (method, mean) in report.method_means() {
        line(&method, MEAN_SEED, &|m| mean.get(m));
    }
    out
}

/// One row per `(metric, i, j)` cell; domains are numbered from 1.
pub fn temporal_matrix_csv(matrices: &[TemporalEffectMatrix]) -> String {
    let mut out = format!("{MATRIX_HEADER}\n");
    for m in matrices {
        for i in 0..m.domains() {
            for j in 0..m.domains() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    m.metric.name(),
                    i + 1,
                    j + 1,
                    decimal(m.p[i][j]),
                    decimal(m.delta[i][j])
                );
            }
        }
    }
    out
}

pub fn timings_text(timings: &[(String, f64)]) -> String {
    timings.iter().map(|(stage, secs)| format!("{stage}\t{secs:.3}s\n")).collect()
}

/// One parsed `metrics.csv` line; `seed` is `None` on seed-averaged rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub seed: Option<u64>,
    pub values: [Option<f64>; 4],
}

fn csv_err(line: usize, message: String) -> MoteError {
    MoteError::Parse {
        path: PathBuf::from("metrics.csv"),
        line,
        message,
    }
}

fn parse_cell(cell: &str, line: usize) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| csv_err(line, format!("bad number `{cell}`")))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(csv_err(1, "unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(n, l)| {
            let line = n + 2;
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != 6 {
                return Err(csv_err(line, format!("expected 6 columns, found {}", cells.len())));
            }
            let seed = match cells[1] {
                MEAN_SEED => None,
                s => Some(s.parse().map_err(|_| csv_err(line, format!("bad seed `{s}`")))?),
            };
            let mut values = [None; 4];
            for (v, c) in values.iter_mut().zip(&cells[2..]) {
                *v = parse_cell(c, line)?;
            }
            Ok(MetricsRow {
                method: cells[0].to_string(),
                seed,
                values,
            })
        })
        .collect()
}

/// `(metric, source_domain, target_domain, p_ij, delta)` from `temporal_matrix.csv`.
pub type MatrixRow = (MetricKind, usize, usize, f64, f64);

pub fn parse_temporal_matrix_csv(text: &str) -> Result<Vec<MatrixRow>> {
    let err = |line: usize, message: String| MoteError::Parse {
        path: PathBuf::from("temporal_matrix.csv"),
        line,
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some(MATRIX_HEADER) {
        return Err(err(1, "unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(n, l)| {
            let line = n + 2;
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 5 {
                return Err(err(line, format!("expected 5 columns, found {}", c.len())));
            }
            let metric = MetricKind::parse(c[0]).ok_or_else(|| err(line, format!("unknown metric `{}`", c[0])))?;
            let int = |s: &str| s.parse::<usize>().map_err(|_| err(line, format!("bad index `{s}`")));
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(line, format!("bad number `{s}`")));
            Ok((metric, int(c[1])?, int(c[2])?, num(c[3])?, num(c[4])?))
        })
        .collect()
}

/// Every file written by [`emit_report`].
#[derive(Debug, Clone, Default)]
pub struct EmittedFiles {
    pub metrics: PathBuf,
    pub temporal_matrix: Option<PathBuf>,
    pub config_echo: PathBuf,
    pub timings: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MoteError::io(format!("writing {}", path.display()), e))
}

/// Writes `metrics.csv`, `temporal_matrix.csv` (when matrices exist),
/// `config_echo`, `timings.txt`, and one checkpoint directory per trained
/// model under `checkpoints/` when `checkpoints` is set.
pub fn emit_report(report: &RunReport, out: &Path, checkpoints: bool) -> Result<EmittedFiles> {
    fs::create_dir_all(out).map_err(|e| MoteError::io(format!("creating {}", out.display()), e))?;
    let mut files = EmittedFiles {
        metrics: out.join("metrics.csv"),
        config_echo: out.join("config_echo"),
        timings: out.join("timings.txt"),
        ..EmittedFiles::default()
    };
    write_file(&files.metrics, &metrics_csv(report))?;
    if !report.matrices.is_empty() {
        let path = out.join("temporal_matrix.csv");
        write_file(&path, &temporal_matrix_csv(&report.matrices))?;
        files.temporal_matrix = Some(path);
    }
    write_file(&files.config_echo, &report.config_echo)?;
    write_file(&files.timings, &timings_text(&report.timings))?;
    if checkpoints {
        for (method, seed, model) in &report.models {
            let dir = out.join("checkpoints").join(format!("{method}_seed{seed}"));
            match model {
                TrainedModel::Source(m) => save_source(m, &dir)?,
                TrainedModel::Mote(m) => save_mote(m, &dir)?,
            }
            files.checkpoints.push(dir);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;
    use crate::metrics::MetricReport;
    use crate::runner::MethodRow;
    use proptest::prelude::*;

    fn report(rows: Vec<MethodRow>, metrics: Vec<MetricKind>) -> RunReport {
        RunReport {
            kind: ExperimentKind::AdaptCompare,
            rows,
            matrices: Vec::new(),
            metrics,
            config_echo: String::new(),
            seeds: vec![41, 42],
            timings: Vec::new(),
            models: Vec::new(),
        }
    }

    fn metric_report(a: f64, b: f64, c: f64, d: f64) -> MetricReport {
        MetricReport {
            f1_macro: a,
            f1_samples: b,
            auc_macro: c,
            fair: d,
            fairness: None,
        }
    }

    fn row(method: &str, seed: u64, r: MetricReport) -> MethodRow {
        MethodRow {
            method: method.into(),
            seed,
            report: r,
        }
    }

    #[test]
    fn empty_metric_list_writes_header_only() {
        let r = report(vec![row("source", 41, metric_report(0.5, 0.5, 0.5, 0.1))], vec![]);
        assert_eq!(metrics_csv(&r), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn rows_then_means_with_blank_unrequested_columns() {
        let r = report(
            vec![
                row("source", 41, metric_report(0.5, 0.25, 0.75, 0.125)),
                row("source", 42, metric_report(0.7, 0.35, 0.85, 0.025)),
            ],
            vec![MetricKind::F1Macro, MetricKind::Fair],
        );
        let want = format!(
            "{METRICS_HEADER}\nsource,41,0.500000,,,0.125000\nsource,42,0.700000,,,0.025000\nsource,mean,0.600000,,,0.075000\n"
        );
        assert_eq!(metrics_csv(&r), want);
    }

    #[test]
    fn matrix_has_t_squared_rows() {
        let p: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| 0.9 - 0.05 * (i as f64 - j as f64).abs()).collect()).collect();
        let m = TemporalEffectMatrix::from_performance(MetricKind::F1Macro, p, 3);
        let text = temporal_matrix_csv(&[m.clone()]);
        let rows = parse_temporal_matrix_csv(&text).unwrap();
        assert_eq!(rows.len(), 16);
        for (metric, i, j, p_ij, delta) in rows {
            assert_eq!(metric, MetricKind::F1Macro);
            assert!((p_ij - m.p[i - 1][j - 1]).abs() < 1e-9);
            assert!((delta - m.delta[i - 1][j - 1]).abs() < 1e-9);
        }
    }

    fn round6(x: f64) -> f64 {
        (x * 1e6).round() / 1e6
    }

    proptest! {
        #[test]
        fn csv_reload_matches_memory(values in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..2.0), 1..6)) {
            let rows: Vec<MethodRow> = values
                .iter()
                .enumerate()
                .map(|(s, &(a, b, c, d))| row("mote", s as u64, metric_report(a, b, c, d)))
                .collect();
            let r = report(rows, MetricKind::ALL.to_vec());
            let parsed = parse_metrics_csv(&metrics_csv(&r)).unwrap();
            prop_assert_eq!(parsed.len(), values.len() + 1);
            for (p, orig) in parsed.iter().zip(&r.rows) {
                prop_assert_eq!(p.seed, Some(orig.seed));
                for (k, m) in MetricKind::ALL.iter().enumerate() {
                    let x = orig.report.get(*m);
                    let back = p.values[k].unwrap();
                    prop_assert!((back - round6(x)).abs() < 1e-9);
                    prop_assert!((back - x).abs() <= 5e-7 + 1e-12);
                }
            }
            prop_assert_eq!(parsed.last().unwrap().seed, None);
        }
    }

    #[test]
    fn emit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report(vec![row("source", 41, metric_report(0.5, 0.5, 0.5, 0.0))], MetricKind::ALL.to_vec());
        r.config_echo = "experiment.kind=adapt-compare\n".into();
        r.timings = vec![("source seed 41".into(), 0.5)];
        let files = emit_report(&r, &dir.path().join("nested"), true).unwrap();
        assert!(files.temporal_matrix.is_none());
        assert!(fs::read_to_string(&files.metrics).unwrap().starts_with(METRICS_HEADER));
        assert_eq!(fs::read_to_string(&files.config_echo).unwrap(), r.config_echo);
        assert!(fs::read_to_string(&files.timings).unwrap().contains("source seed 41\t0.500s"));
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(parse_metrics_csv("nope\n").is_err());
        let bad = format!("{METRICS_HEADER}\nsource,x,1,1,1,1\n");
        assert!(parse_metrics_csv(&bad).is_err());
    }
}
