//! Classification metrics (macro-F1, samples-F1, macro-AUC), the
//! FPR/FNR equality-difference fairness score, and the cross-domain
//! temporal-effect matrix.

use crate::error::{MoteError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub label: usize,
    pub predicted: usize,
    /// Per-class scores, length C.
    pub scores: Vec<f64>,
    /// Index into the corpus group list.
    pub group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    F1Macro,
    F1Samples,
    AucMacro,
    Fair,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::F1Macro,
        MetricKind::F1Samples,
        MetricKind::AucMacro,
        MetricKind::Fair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::F1Macro => "f1_macro",
            MetricKind::F1Samples => "f1_samples",
            MetricKind::AucMacro => "auc_macro",
            MetricKind::Fair => "fair",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MetricKind::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Per-class one-vs-rest confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

impl Confusion {
    fn of<'a>(records: impl IntoIterator<Item = &'a EvalRecord>, class: usize) -> Self {
        let mut c = Confusion::default();
        for r in records {
            match (r.label == class, r.predicted == class) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    fn fnr(&self) -> f64 {
        ratio(self.fn_, self.fn_ + self.tp)
    }
}

/// Empty denominators give 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Unweighted mean of per-class F1 over all `classes`; a class with no true
/// or predicted instances contributes 0.
pub fn macro_f1(records: &[EvalRecord], classes: usize) -> f64 {
    if classes == 0 {
        return 0.0;
    }
    (0..classes)
        .map(|c| Confusion::of(records, c).f1())
        .sum::<f64>()
        / classes as f64
}

/// For single-label records, per-sample F1 is 1 on a correct prediction and
/// 0 otherwise, so this equals accuracy.
pub fn samples_f1(records: &[EvalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.label == r.predicted).count() as f64 / records.len() as f64
}

/// Midranks (1-based) of `values`.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// One-vs-rest AUC of `class` via the Mann-Whitney rank sum; `None` when the
/// class has no positives or no negatives.
pub fn auc_one_vs_rest(records: &[EvalRecord], class: usize) -> Option<f64> {
    let n_pos = records.iter().filter(|r| r.label == class).count();
    let n_neg = records.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let scores: Vec<f64> = records.iter().map(|r| r.scores[class]).collect();
    let ranks = midranks(&scores);
    let rank_sum: f64 = records
        .iter()
        .zip(&ranks)
        .filter(|(r, _)| r.label == class)
        .map(|(_, &rk)| rk)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucSummary {
    pub mean: f64,
    /// Per-class AUC; `None` for classes skipped as unevaluable.
    pub per_class: Vec<Option<f64>>,
}

pub fn auc_summary(records: &[EvalRecord], classes: usize) -> Result<AucSummary> {
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|c| auc_one_vs_rest(records, c))
        .collect();
    let evaluable: Vec<f64> = per_class.iter().flatten().copied().collect();
    if evaluable.is_empty() {
        return Err(MoteError::InvalidArgument(
            "no class has both positive and negative records; AUC undefined".into(),
        ));
    }
    Ok(AucSummary {
        mean: evaluable.iter().sum::<f64>() / evaluable.len() as f64,
        per_class,
    })
}

pub fn auc_macro(records: &[EvalRecord], classes: usize) -> Result<f64> {
    Ok(auc_summary(records, classes)?.mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRates {
    pub class: usize,
    pub group: usize,
    pub fpr: f64,
    pub fnr: f64,
    /// True when a rate's denominator was empty and it was set to 0.
    pub fpr_undefined: bool,
    pub fnr_undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub ed_fpr: f64,
    pub ed_fnr: f64,
    pub fair: f64,
    pub per_group: Vec<GroupRates>,
}

/// Equality differences of FPR and FNR across groups.
///
/// Binary tasks use class 1 as the positive class. With more classes each
/// class is scored one-vs-rest and the per-class sums
/// `Σ_g |rate_g - rate|` are averaged over classes.
pub fn fairness_equality_difference(
    records: &[EvalRecord],
    classes: usize,
    groups: usize,
) -> Result<FairnessReport> {
    let mut present = vec![false; groups];
    for r in records {
        if r.group >= groups {
            return Err(MoteError::IndexOutOfRange {
                what: "group",
                index: r.group,
                len: groups,
            });
        }
        present[r.group] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(MoteError::InvalidArgument(
            "fairness needs records from at least two groups".into(),
        ));
    }
    let positive_classes: Vec<usize> = if classes == 2 { vec![1] } else { (0..classes).collect() };
    let mut ed_fpr = 0.0;
    let mut ed_fnr = 0.0;
    let mut per_group = Vec::new();
    for &c in &positive_classes {
        let overall = Confusion::of(records, c);
        for g in (0..groups).filter(|&g| present[g]) {
            let conf = Confusion::of(records.iter().filter(|r| r.group == g), c);
            ed_fpr += (conf.fpr() - overall.fpr()).abs();
            ed_fnr += (conf.fnr() - overall.fnr()).abs();
            per_group.push(GroupRates {
                class: c,
                group: g,
                fpr: conf.fpr(),
                fnr: conf.fnr(),
                fpr_undefined: conf.fp + conf.tn == 0,
                fnr_undefined: conf.fn_ + conf.tp == 0,
            });
        }
    }
    let n = positive_classes.len() as f64;
    ed_fpr /= n;
    ed_fnr /= n;
    Ok(FairnessReport {
        ed_fpr,
        ed_fnr,
        fair: ed_fpr + ed_fnr,
        per_group,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub f1_macro: f64,
    pub f1_samples: f64,
    pub auc_macro: f64,
    pub fair: f64,
    pub fairness: Option<FairnessReport>,
}

impl MetricReport {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::F1Macro => self.f1_macro,
            MetricKind::F1Samples => self.f1_samples,
            MetricKind::AucMacro => self.auc_macro,
            MetricKind::Fair => self.fair,
        }
    }

    /// Element-wise mean of several reports (breakdowns dropped).
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        MetricReport {
            f1_macro: avg(|r| r.f1_macro),
            f1_samples: avg(|r| r.f1_samples),
            auc_macro: avg(|r| r.auc_macro),
            fair: avg(|r| r.fair),
            fairness: None,
        }
    }
}

/// All four metrics. Fairness is reported as 0 with no breakdown when fewer
/// than two groups are present; AUC is 0.5 when no class is evaluable.
pub fn compute_report(records: &[EvalRecord], classes: usize, groups: usize) -> MetricReport {
    let fairness = fairness_equality_difference(records, classes, groups).ok();
    MetricReport {
        f1_macro: macro_f1(records, classes),
        f1_samples: samples_f1(records),
        auc_macro: auc_macro(records, classes).unwrap_or(0.5),
        fair: fairness.as_ref().map_or(0.0, |f| f.fair),
        fairness,
    }
}

pub fn metric_value(kind: MetricKind, records: &[EvalRecord], classes: usize, groups: usize) -> f64 {
    match kind {
        MetricKind::F1Macro => macro_f1(records, classes),
        MetricKind::F1Samples => samples_f1(records),
        MetricKind::AucMacro => auc_macro(records, classes).unwrap_or(0.5),
        MetricKind::Fair => fairness_equality_difference(records, classes, groups)
            .map_or(0.0, |f| f.fair),
    }
}

/// Cross-domain performance `p_ij` and temporal effect `p_ij - p_jj` for
/// one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEffectMatrix {
    pub metric: MetricKind,
    pub p: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub seeds: usize,
}

impl TemporalEffectMatrix {
    /// `p[i][j]` averaged over seeds; row `i` is the training domain.
    pub fn from_performance(metric: MetricKind, p: Vec<Vec<f64>>, seeds: usize) -> Self {
        let delta = p
            .iter()
            .map(|row| row.iter().enumerate().map(|(j, v)| v - p[j][j]).collect())
            .collect();
        TemporalEffectMatrix {
            metric,
            p,
            delta,
            seeds,
        }
    }

    pub fn domains(&self) -> usize {
        self.p.len()
    }

    /// Mean `|delta_ij|` over pairs with `|i - j| = gap`.
    pub fn mean_abs_delta_at_gap(&self, gap: usize) -> f64 {
        let n = self.domains();
        let vals: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i.abs_diff(j) == gap)
            .map(|(i, j)| self.delta[i][j].abs())
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

/// Builds one matrix per metric. `cell(i, seed)` trains on domain `i` and
/// returns evaluation records for every domain's test split, in domain
/// order. Cells are independent and may be computed in parallel.
pub fn temporal_effect_matrix<F>(
    domains: usize,
    seeds: &[u64],
    metrics: &[MetricKind],
    classes: usize,
    groups: usize,
    cell: F,
) -> Result<Vec<TemporalEffectMatrix>>
where
    F: Fn(usize, u64) -> Result<Vec<Vec<EvalRecord>>> + Sync,
{
    use rayon::prelude::*;

    if seeds.is_empty() {
        return Err(MoteError::Empty("seed list".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..domains)
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<Vec<Vec<EvalRecord>>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            cell(i, seed).map_err(|e| {
                e.in_stage(format!("temporal effect cell (train domain {}, seed {seed})", i + 1))
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(metrics.len());
    for &m in metrics {
        let mut p = vec![vec![0.0; domains]; domains];
        for (&(i, _), per_target) in jobs.iter().zip(&results) {
            for (j, records) in per_target.iter().enumerate() {
                p[i][j] += metric_value(m, records, classes, groups) / seeds.len() as f64;
            }
        }
        out.push(TemporalEffectMatrix::from_performance(m, p, seeds.len()));
    }
    Ok(out)
}
