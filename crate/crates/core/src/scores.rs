//! Per-epoch score series and their CSV interchange format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::MeasureId;

/// What produced a score series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreSource {
    Measure(MeasureId),
    /// Confidence-network prediction of the true-class probability.
    Tcp,
    /// True-class probability computed from the reference labels.
    TcpTarget,
}

impl ScoreSource {
    pub fn name(self) -> &'static str {
        match self {
            ScoreSource::Measure(m) => m.name(),
            ScoreSource::Tcp => "TCP",
            ScoreSource::TcpTarget => "TCP_TARGET",
        }
    }
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TCP" => Ok(ScoreSource::Tcp),
            "TCP_TARGET" => Ok(ScoreSource::TcpTarget),
            other => other.parse::<MeasureId>().map(ScoreSource::Measure),
        }
    }
}

/// Scores for one recording; `scores` are oriented so that higher means
/// more uncertain, `raw_values` keep the measure's native scale.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyScoreSeries {
    pub recording_id: String,
    pub source: ScoreSource,
    pub scores: Vec<f64>,
    pub raw_values: Vec<f64>,
}

impl UncertaintyScoreSeries {
    /// Series from raw TCP values; oriented score is `1 - tcp`.
    pub fn from_tcp(recording_id: &str, source: ScoreSource, tcp: Vec<f64>) -> Self {
        UncertaintyScoreSeries {
            recording_id: recording_id.to_string(),
            source,
            scores: tcp.iter().map(|v| 1.0 - v).collect(),
            raw_values: tcp,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    recording_id: String,
    epoch_index: usize,
    measure: String,
    raw_value: f64,
    oriented_score: f64,
}

pub fn scores_csv(series: &[UncertaintyScoreSeries]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["recording_id", "epoch_index", "measure", "raw_value", "oriented_score"])?;
    for s in series {
        for (i, (raw, score)) in s.raw_values.iter().zip(&s.scores).enumerate() {
            wtr.write_record(&[
                s.recording_id.clone(),
                i.to_string(),
                s.source.name().to_string(),
                raw.to_string(),
                score.to_string(),
            ])?;
        }
    }
    wtr.into_inner().map_err(|e| Error::format("scores csv", e.to_string()))
}

/// Score series keyed by source, then by recording id.
pub type ScoreTable = BTreeMap<ScoreSource, BTreeMap<String, UncertaintyScoreSeries>>;

pub fn parse_scores_csv(bytes: &[u8], file: &str) -> Result<ScoreTable> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut table = ScoreTable::new();
    for (line, row) in rdr.deserialize::<ScoreRow>().enumerate() {
        let row = row?;
        let source: ScoreSource = row.measure.parse()?;
        let series = table
            .entry(source)
            .or_default()
            .entry(row.recording_id.clone())
            .or_insert_with(|| UncertaintyScoreSeries {
                recording_id: row.recording_id.clone(),
                source,
                scores: Vec::new(),
                raw_values: Vec::new(),
            });
        if row.epoch_index != series.scores.len() {
            return Err(Error::format(
                file,
                format!(
                    "row {}: {} epoch {} out of order",
                    line + 2,
                    row.recording_id,
                    row.epoch_index
                ),
            ));
        }
        series.scores.push(row.oriented_score);
        series.raw_values.push(row.raw_value);
    }
    Ok(table)
}

pub fn read_scores_csv(path: &Path) -> Result<ScoreTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_scores_csv(&bytes, &path.display().to_string())
}
