//! Simulated physician review driven by a TCP threshold.
//!
//! Every scored epoch whose TCP is strictly below the threshold is flagged;
//! flagged epochs that disagree with the reference are replaced by the
//! reference stage. Effort and metrics are pooled over all recordings passed in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{predicted_hypnogram, Recording, StageLabel};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, trapezoid_area, MetricReport};
use crate::scores::UncertaintyScoreSeries;

pub const DEFAULT_LEVELS: [f64; 4] = [0.80, 0.85, 0.90, 0.95];

/// Scored epochs of a split, flattened across recordings.
#[derive(Debug, Clone, Default)]
pub struct ReviewPool {
    pub reference: Vec<StageLabel>,
    pub predicted: Vec<StageLabel>,
    pub tcp: Vec<f64>,
}

impl ReviewPool {
    pub fn from_parts(reference: Vec<StageLabel>, predicted: Vec<StageLabel>, tcp: Vec<f64>) -> Result<Self> {
        if reference.len() != predicted.len() || predicted.len() != tcp.len() {
            return Err(Error::Shape("reference, predictions and TCP differ in length".into()));
        }
        let keep: Vec<usize> = (0..reference.len()).filter(|&i| reference[i].is_scored()).collect();
        Ok(ReviewPool {
            reference: keep.iter().map(|&i| reference[i]).collect(),
            predicted: keep.iter().map(|&i| predicted[i]).collect(),
            tcp: keep.iter().map(|&i| tcp[i]).collect(),
        })
    }

    pub fn from_recordings(
        recordings: &[&Recording],
        tcp: &BTreeMap<String, UncertaintyScoreSeries>,
    ) -> Result<Self> {
        let mut pool = ReviewPool::default();
        for rec in recordings {
            let labels = rec.labels()?;
            let series = tcp.get(&rec.recording_id).ok_or_else(|| {
                Error::Insufficient(format!("no TCP scores for recording {}", rec.recording_id))
            })?;
            let part = ReviewPool::from_parts(
                labels.to_vec(),
                predicted_hypnogram(rec),
                series.raw_values.clone(),
            )
            .map_err(|_| {
                Error::Shape(format!(
                    "{}: {} TCP values for {} epochs",
                    rec.recording_id,
                    series.raw_values.len(),
                    labels.len()
                ))
            })?;
            pool.reference.extend(part.reference);
            pool.predicted.extend(part.predicted);
            pool.tcp.extend(part.tcp);
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    pub threshold: f64,
    pub effort_pct: f64,
    pub report: MetricReport,
    pub detection_recall: f64,
    pub corrected: Vec<StageLabel>,
}

/// Review every epoch with TCP < `threshold`. With no discordant epochs the
/// detection recall is 1.
pub fn simulate_threshold(pool: &ReviewPool, threshold: f64) -> Result<ThresholdOutcome> {
    if pool.is_empty() {
        return Err(Error::Insufficient("no scored epochs to review".into()));
    }
    let mut flagged = 0usize;
    let mut discordant = 0usize;
    let mut caught = 0usize;
    let corrected: Vec<StageLabel> = pool
        .reference
        .iter()
        .zip(&pool.predicted)
        .zip(&pool.tcp)
        .map(|((&r, &p), &tcp)| {
            let flag = tcp < threshold;
            let wrong = r != p;
            flagged += flag as usize;
            discordant += wrong as usize;
            if flag && wrong {
                caught += 1;
                r
            } else {
                p
            }
        })
        .collect();
    let report = classification_report(&pool.reference, &corrected)?;
    Ok(ThresholdOutcome {
        threshold,
        effort_pct: 100.0 * flagged as f64 / pool.len() as f64,
        report,
        detection_recall: if discordant == 0 { 1.0 } else { caught as f64 / discordant as f64 },
        corrected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPoint {
    #[serde(rename = "t")]
    pub threshold: f64,
    pub effort_pct: f64,
    pub acc: f64,
    pub f1w: f64,
    pub kappa: f64,
    pub detection_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewCurve {
    pub grid_step: f64,
    pub points: Vec<ReviewPoint>,
}

impl ReviewCurve {
    pub fn baseline(&self) -> &ReviewPoint {
        &self.points[0]
    }

    /// Area under detection recall against effort fraction.
    pub fn detection_area(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|p| (p.effort_pct / 100.0, p.detection_recall))
            .collect();
        trapezoid_area(&pts)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        crate::io::csv_bytes(&self.points)
    }
}

/// Number of grid intervals for `step`, which must divide 1.
pub fn grid_intervals(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("grid step {step} does not divide 1")));
    }
    Ok(n as usize)
}

/// Thresholds `i / n` for `i = 0..=n`.
pub fn sweep(pool: &ReviewPool, grid_step: f64) -> Result<ReviewCurve> {
    let n = grid_intervals(grid_step)?;
    let points = (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            simulate_threshold(pool, t).map(|o| ReviewPoint {
                threshold: t,
                effort_pct: o.effort_pct,
                acc: o.report.acc,
                f1w: o.report.f1w,
                kappa: o.report.kappa,
                detection_recall: o.detection_recall,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReviewCurve { grid_step, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMetric {
    Acc,
    F1w,
    Kappa,
}

impl CurveMetric {
    pub const ALL: [CurveMetric; 3] = [CurveMetric::Acc, CurveMetric::F1w, CurveMetric::Kappa];

    fn of(self, p: &ReviewPoint) -> f64 {
        match self {
            CurveMetric::Acc => p.acc,
            CurveMetric::F1w => p.f1w,
            CurveMetric::Kappa => p.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub metric: CurveMetric,
    /// Target as a fraction, e.g. 0.9 for 90%.
    pub level: f64,
    pub min_effort_pct: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

/// First grid threshold at which each metric reaches each level.
pub fn effort_to_benchmark(curve: &ReviewCurve, levels: &[f64]) -> Result<BenchmarkTable> {
    let mut rows = Vec::new();
    for metric in CurveMetric::ALL {
        for &level in levels {
            let hit = curve.points.iter().find(|p| metric.of(p) >= level).ok_or_else(|| {
                Error::Degenerate(format!("{metric:?} never reaches {level} on the curve"))
            })?;
            rows.push(BenchmarkRow {
                metric,
                level,
                min_effort_pct: hit.effort_pct,
                threshold: hit.threshold,
            });
        }
    }
    Ok(BenchmarkTable { rows })
}
