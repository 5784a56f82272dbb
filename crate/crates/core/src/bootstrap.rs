//! Subject-level bootstrap tests.
//!
//! H01: the mean over subjects of `d_i`, the gap between the subject's mean
//! TCP on epochs that agree with the reference and on epochs that do not.
//! H02: the correlation between each subject's mean TCP and one of its
//! agreement metrics. Subjects are resampled with replacement; resample `r`
//! draws from its own RNG stream so results do not depend on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{predicted_hypnogram, Diagnosis, Recording};
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, MetricReport};
use crate::rng::stream_rng;
use crate::scores::UncertaintyScoreSeries;
use crate::stats::{pearson, quantile_sorted, spearman};

pub const MIN_SUBJECTS: usize = 10;
pub const DEFAULT_REPS: usize = 5000;
const MAX_REDRAWS_PER_REP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject_id: String,
    pub n_epochs: usize,
    pub mean_tcp_all: f64,
    pub mean_tcp_correct: Option<f64>,
    pub mean_tcp_incorrect: Option<f64>,
    /// Present only when the subject has both agreeing and discordant epochs.
    pub d: Option<f64>,
    pub acc: f64,
    pub f1w: f64,
    pub kappa: f64,
    pub diagnoses: BTreeSet<Diagnosis>,
}

/// Pool each subject's recordings; Unknown-labeled epochs are ignored.
pub fn summarize_subjects(
    recordings: &[&Recording],
    tcp: &BTreeMap<String, UncertaintyScoreSeries>,
) -> Result<Vec<SubjectSummary>> {
    let mut by_subject: BTreeMap<&str, Vec<&Recording>> = BTreeMap::new();
    for rec in recordings {
        by_subject.entry(rec.subject_id.as_str()).or_default().push(rec);
    }
    let mut out = Vec::with_capacity(by_subject.len());
    for (subject, recs) in by_subject {
        let mut confusion = [[0u64; 5]; 5];
        let (mut all, mut correct, mut incorrect) = (Vec::new(), Vec::new(), Vec::new());
        let mut diagnoses = BTreeSet::new();
        for rec in recs {
            let labels = rec.labels()?;
            let series = tcp.get(&rec.recording_id).ok_or_else(|| {
                Error::Insufficient(format!("no TCP scores for recording {}", rec.recording_id))
            })?;
            if series.raw_values.len() != labels.len() {
                return Err(Error::Shape(format!(
                    "{}: {} TCP values for {} epochs",
                    rec.recording_id,
                    series.raw_values.len(),
                    labels.len()
                )));
            }
            let pred = predicted_hypnogram(rec);
            let cm = confusion_matrix(labels, &pred)?;
            for (row, add) in confusion.iter_mut().zip(cm) {
                row.iter_mut().zip(add).for_each(|(a, b)| *a += b);
            }
            for ((l, p), &v) in labels.iter().zip(&pred).zip(&series.raw_values) {
                if !l.is_scored() {
                    continue;
                }
                all.push(v);
                if l == p {
                    correct.push(v);
                } else {
                    incorrect.push(v);
                }
            }
            diagnoses.extend(rec.diagnoses.iter().copied());
        }
        if all.is_empty() {
            continue;
        }
        let report = MetricReport::from_confusion(confusion)?;
        let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let mean_tcp_correct = avg(&correct);
        let mean_tcp_incorrect = avg(&incorrect);
        out.push(SubjectSummary {
            subject_id: subject.to_string(),
            n_epochs: all.len(),
            mean_tcp_all: avg(&all).expect("non-empty"),
            d: mean_tcp_correct.zip(mean_tcp_incorrect).map(|(c, i)| c - i),
            mean_tcp_correct,
            mean_tcp_incorrect,
            acc: report.acc,
            f1w: report.f1w,
            kappa: report.kappa,
            diagnoses,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Group {
    All,
    Diagnosis(Diagnosis),
}

impl Group {
    pub fn contains(self, s: &SubjectSummary) -> bool {
        match self {
            Group::All => true,
            Group::Diagnosis(d) => s.diagnoses.contains(&d),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::All => "ALL",
            Group::Diagnosis(d) => d.name(),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H01,
    H02,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectMetric {
    Acc,
    F1w,
    Kappa,
}

impl SubjectMetric {
    pub fn of(self, s: &SubjectSummary) -> f64 {
        match self {
            SubjectMetric::Acc => s.acc,
            SubjectMetric::F1w => s.f1w,
            SubjectMetric::Kappa => s.kappa,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SubjectMetric::Acc => "acc",
            SubjectMetric::F1w => "f1w",
            SubjectMetric::Kappa => "kappa",
        }
    }
}

impl FromStr for SubjectMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acc" => Ok(SubjectMetric::Acc),
            "f1w" => Ok(SubjectMetric::F1w),
            "kappa" => Ok(SubjectMetric::Kappa),
            _ => Err(Error::InvalidConfig(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

impl Correlation {
    fn compute(self, x: &[f64], y: &[f64]) -> Option<f64> {
        match self {
            Correlation::Pearson => pearson(x, y),
            Correlation::Spearman => spearman(x, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub hypothesis: Hypothesis,
    pub metric: Option<SubjectMetric>,
    pub group: String,
    pub n_subjects: usize,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reps: usize,
    pub seed: u64,
    /// The 95% interval excludes 0.
    pub rejected: bool,
    /// Resamples drawn again because a statistic was undefined.
    pub redraws: usize,
}

fn summarize_distribution(
    mut stats: Vec<f64>,
    hypothesis: Hypothesis,
    metric: Option<SubjectMetric>,
    group: Group,
    n: usize,
    seed: u64,
    redraws: usize,
) -> BootstrapResult {
    stats.sort_by(f64::total_cmp);
    let ci_low = quantile_sorted(&stats, 0.025);
    let ci_high = quantile_sorted(&stats, 0.975);
    BootstrapResult {
        hypothesis,
        metric,
        group: group.name().to_string(),
        n_subjects: n,
        median: quantile_sorted(&stats, 0.5),
        ci_low,
        ci_high,
        reps: stats.len(),
        seed,
        rejected: ci_low > 0.0 || ci_high < 0.0,
        redraws,
    }
}

fn check_group_size(n: usize, group: Group) -> Result<()> {
    if n < MIN_SUBJECTS {
        return Err(Error::Insufficient(format!(
            "insufficient subjects in group {group}: {n} eligible, need at least {MIN_SUBJECTS} subjects"
        )));
    }
    Ok(())
}

/// H01: bootstrap distribution of the mean of `d_i` over the group.
pub fn bootstrap_mean_diff(
    summaries: &[SubjectSummary],
    group: Group,
    reps: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let d: Vec<f64> = summaries
        .iter()
        .filter(|s| group.contains(s))
        .filter_map(|s| s.d)
        .collect();
    check_group_size(d.len(), group)?;
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be positive".into()));
    }
    let n = d.len();
    let stats = (0..reps)
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            // incremental mean: exact when every drawn value is identical
            let mut m = 0.0;
            for k in 0..n {
                m += (d[rng.gen_range(0..n)] - m) / (k + 1) as f64;
            }
            m
        })
        .collect();
    Ok(summarize_distribution(stats, Hypothesis::H01, None, group, n, seed, 0))
}

/// H02: bootstrap distribution of the correlation between mean TCP and `metric`.
pub fn bootstrap_correlation(
    summaries: &[SubjectSummary],
    group: Group,
    metric: SubjectMetric,
    method: Correlation,
    reps: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let members: Vec<&SubjectSummary> = summaries.iter().filter(|s| group.contains(s)).collect();
    check_group_size(members.len(), group)?;
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be positive".into()));
    }
    let x: Vec<f64> = members.iter().map(|s| s.mean_tcp_all).collect();
    let y: Vec<f64> = members.iter().map(|s| metric.of(s)).collect();
    if method.compute(&x, &y).is_none() {
        return Err(Error::Degenerate(format!(
            "zero variance in mean TCP or {} for group {group}",
            metric.name()
        )));
    }
    let n = x.len();
    let mut redraws = 0;
    let mut stats = Vec::with_capacity(reps);
    let (mut xs, mut ys) = (vec![0.0; n], vec![0.0; n]);
    for r in 0..reps {
        let mut rng = stream_rng(seed, r as u64);
        let mut attempts = 0;
        loop {
            for k in 0..n {
                let j = rng.gen_range(0..n);
                xs[k] = x[j];
                ys[k] = y[j];
            }
            if let Some(c) = method.compute(&xs, &ys) {
                stats.push(c);
                break;
            }
            redraws += 1;
            attempts += 1;
            if attempts >= MAX_REDRAWS_PER_REP {
                return Err(Error::Degenerate(format!(
                    "resample {r}: no non-degenerate draw after {attempts} attempts"
                )));
            }
        }
    }
    Ok(summarize_distribution(
        stats,
        Hypothesis::H02,
        Some(metric),
        group,
        n,
        seed,
        redraws,
    ))
}
