//! Agreement metrics between a reference and a predicted hypnogram, and the
//! ROC/PR evaluation of uncertainty scores as detectors of discordant epochs.

use serde::{Deserialize, Serialize};

use crate::data::{StageLabel, N_STAGES};
use crate::error::{Error, Result};
use crate::stats::{fractional_ranks, mean, median};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Rows are reference stages, columns predicted stages.
    pub confusion: [[u64; N_STAGES]; N_STAGES],
    pub acc: f64,
    pub f1w: f64,
    pub kappa: f64,
    pub n_epochs: u64,
    /// Chance agreement was 1 (a single class on both sides).
    pub kappa_degenerate: bool,
}

impl MetricReport {
    pub fn from_confusion(confusion: [[u64; N_STAGES]; N_STAGES]) -> Result<Self> {
        let n: u64 = confusion.iter().flatten().sum();
        if n == 0 {
            return Err(Error::Insufficient("no scored epochs".into()));
        }
        let nf = n as f64;
        let diag: u64 = (0..N_STAGES).map(|c| confusion[c][c]).sum();
        let row = |c: usize| confusion[c].iter().sum::<u64>();
        let col = |c: usize| confusion.iter().map(|r| r[c]).sum::<u64>();

        let p_o = diag as f64 / nf;
        let p_e: f64 = (0..N_STAGES).map(|c| (row(c) as f64 / nf) * (col(c) as f64 / nf)).sum();
        let degenerate = (1.0 - p_e).abs() < 1e-15;
        let kappa = if degenerate {
            if diag == n {
                1.0
            } else {
                0.0
            }
        } else {
            (p_o - p_e) / (1.0 - p_e)
        };

        let mut f1w = 0.0;
        for c in 0..N_STAGES {
            let tp = confusion[c][c] as f64;
            let support = row(c) as f64;
            if support == 0.0 {
                continue;
            }
            let predicted = col(c) as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = tp / support;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            f1w += support * f1;
        }
        let f1w = f1w / nf;
        Ok(MetricReport {
            confusion,
            acc: p_o,
            f1w,
            kappa,
            n_epochs: n,
            kappa_degenerate: degenerate,
        })
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            acc: self.acc,
            f1w: self.f1w,
            kappa: self.kappa,
        }
    }
}

/// Confusion counts over epochs whose reference label is scored.
pub fn confusion_matrix(
    true_labels: &[StageLabel],
    predicted: &[StageLabel],
) -> Result<[[u64; N_STAGES]; N_STAGES]> {
    if true_labels.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} reference labels vs {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    let mut cm = [[0u64; N_STAGES]; N_STAGES];
    for (i, (t, p)) in true_labels.iter().zip(predicted).enumerate() {
        let Some(ti) = t.index() else { continue };
        let pi = p
            .index()
            .ok_or_else(|| Error::Shape(format!("epoch {i}: predicted stage is Unknown")))?;
        cm[ti][pi] += 1;
    }
    Ok(cm)
}

pub fn classification_report(
    true_labels: &[StageLabel],
    predicted: &[StageLabel],
) -> Result<MetricReport> {
    MetricReport::from_confusion(confusion_matrix(true_labels, predicted)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: f64,
    pub f1w: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectAggregate {
    pub n_subjects: usize,
    pub mean: MetricSummary,
    pub median: MetricSummary,
}

pub fn subject_aggregate(per_subject: &[MetricSummary]) -> Result<SubjectAggregate> {
    if per_subject.is_empty() {
        return Err(Error::Insufficient("no subjects to aggregate".into()));
    }
    let col = |f: fn(&MetricSummary) -> f64| per_subject.iter().map(f).collect::<Vec<f64>>();
    let (acc, f1w, kappa) = (col(|m| m.acc), col(|m| m.f1w), col(|m| m.kappa));
    Ok(SubjectAggregate {
        n_subjects: per_subject.len(),
        mean: MetricSummary {
            acc: mean(&acc),
            f1w: mean(&f1w),
            kappa: mean(&kappa),
        },
        median: MetricSummary {
            acc: median(&acc),
            f1w: median(&f1w),
            kappa: median(&kappa),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPrResult {
    /// (false positive rate, true positive rate), from (0, 0) to (1, 1).
    pub roc_points: Vec<(f64, f64)>,
    /// (recall, precision) after each distinct score, highest score first.
    pub pr_points: Vec<(f64, f64)>,
    pub auroc: f64,
    pub aupr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Mann-Whitney AUROC; tied scores count one half.
pub fn auroc_rank(scores: &[f64], positive: &[bool]) -> f64 {
    let ranks = fractional_ranks(scores);
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// ROC and PR curves of `scores` as a detector of `positive`.
pub fn roc_pr(scores: &[f64], positive: &[bool]) -> Result<RocPrResult> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!("{} scores vs {} targets", scores.len(), positive.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite score at position {i}")));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "need both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut roc_points = vec![(0.0, 0.0)];
    let mut pr_points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut aupr = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        aupr += precision * (recall - prev_recall);
        prev_recall = recall;
        roc_points.push((fp as f64 / n_neg as f64, recall));
        pr_points.push((recall, precision));
    }
    Ok(RocPrResult {
        roc_points,
        pr_points,
        auroc: auroc_rank(scores, positive),
        aupr,
        n_pos,
        n_neg,
    })
}

/// Trapezoidal area under a polyline given as (x, y) points sorted by x.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Discordance detection: positives are scored epochs where prediction and reference differ.
pub fn discordance_roc_pr(
    oriented_scores: &[f64],
    true_labels: &[StageLabel],
    predicted: &[StageLabel],
) -> Result<RocPrResult> {
    if oriented_scores.len() != true_labels.len() || true_labels.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "lengths differ: {} scores, {} labels, {} predictions",
            oriented_scores.len(),
            true_labels.len(),
            predicted.len()
        )));
    }
    let mut scores = Vec::with_capacity(oriented_scores.len());
    let mut targets = Vec::with_capacity(oriented_scores.len());
    for ((&s, t), p) in oriented_scores.iter().zip(true_labels).zip(predicted) {
        if t.is_scored() {
            scores.push(s);
            targets.push(p != t);
        }
    }
    roc_pr(&scores, &targets)
}
