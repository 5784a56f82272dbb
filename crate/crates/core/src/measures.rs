//! Softmax-based uncertainty measures over the channel-pair outputs of a recording.
//!
//! | id             | raw value                                          | oriented score |
//! |----------------|----------------------------------------------------|----------------|
//! | `ENTROPY_AVG`  | mean over pairs of the base-2 softmax entropy      | raw            |
//! | `RATIO_AVG`    | mean over pairs of `(1/5) Σ_k p_k / max(p)`        | raw            |
//! | `STD_AVG`      | mean over pairs of `(1/4) Σ_k |p_k - 0.2|`         | −raw           |
//! | `MAX_MAJORITY` | max of the pair-averaged softmax                   | −raw           |
//! | `STD_MAJORITY` | `(1/4) Σ_k |p̄_k - 0.2|` of the pair-averaged softmax | −raw         |
//! | `PCT_MU`       | within-recording rank of `MAX_MAJORITY`            | rank / T       |
//! | `PCT_SIGMA`    | within-recording rank of `STD_MAJORITY`            | rank / T       |
//!
//! The two rank scores give 1 to the least confident epoch of the recording,
//! so thresholding them selects a fixed fraction of epochs per hypnogram.

use std::fmt;
use std::str::FromStr;

use crate::data::{Recording, N_STAGES};
use crate::error::{Error, Result};
use crate::scores::{ScoreSource, UncertaintyScoreSeries};
use crate::stats::fractional_ranks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeasureId {
    EntropyAvg,
    RatioAvg,
    StdAvg,
    MaxMajority,
    StdMajority,
    PctMu,
    PctSigma,
}

impl MeasureId {
    pub const ALL: [MeasureId; 7] = [
        MeasureId::EntropyAvg,
        MeasureId::RatioAvg,
        MeasureId::StdAvg,
        MeasureId::MaxMajority,
        MeasureId::StdMajority,
        MeasureId::PctMu,
        MeasureId::PctSigma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureId::EntropyAvg => "ENTROPY_AVG",
            MeasureId::RatioAvg => "RATIO_AVG",
            MeasureId::StdAvg => "STD_AVG",
            MeasureId::MaxMajority => "MAX_MAJORITY",
            MeasureId::StdMajority => "STD_MAJORITY",
            MeasureId::PctMu => "PCT_MU",
            MeasureId::PctSigma => "PCT_SIGMA",
        }
    }
}

impl fmt::Display for MeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        MeasureId::ALL
            .into_iter()
            .find(|m| m.name() == upper)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown measure {s:?}")))
    }
}

/// Base-2 entropy with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

pub fn softmax_ratio(p: &[f64]) -> f64 {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.iter().map(|v| v / max).sum::<f64>() / p.len() as f64
}

/// `(1/4) Σ_k |p_k - 0.2|` for five classes: mean absolute deviation from
/// the uniform distribution, scaled by `1/(K-1)`.
pub fn softmax_spread(p: &[f64]) -> f64 {
    let uniform = 1.0 / p.len() as f64;
    p.iter().map(|v| (v - uniform).abs()).sum::<f64>() / (p.len() - 1) as f64
}

fn pair_row(rec: &Recording, m: usize, t: usize) -> [f64; N_STAGES] {
    rec.pairs[m].softmax[t].map(|v| v as f64)
}

fn pair_average(rec: &Recording, t: usize, f: fn(&[f64]) -> f64) -> f64 {
    let total: f64 = (0..rec.n_pairs()).map(|m| f(&pair_row(rec, m, t))).sum();
    total / rec.n_pairs() as f64
}

fn majority_max(rec: &Recording, t: usize) -> f64 {
    rec.majority_softmax(t).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Rank score in (0, 1]: the lowest raw value of the recording scores 1.
fn descending_rank_scores(raw: &[f64]) -> Vec<f64> {
    let negated: Vec<f64> = raw.iter().map(|v| -v).collect();
    let n = raw.len() as f64;
    fractional_ranks(&negated).into_iter().map(|r| r / n).collect()
}

pub fn compute_measure(measure: MeasureId, recording: &Recording) -> UncertaintyScoreSeries {
    let t_len = recording.n_epochs();
    let per_epoch = |f: &dyn Fn(usize) -> f64| (0..t_len).map(f).collect::<Vec<f64>>();
    let (raw, scores) = match measure {
        MeasureId::EntropyAvg => {
            let raw = per_epoch(&|t| pair_average(recording, t, entropy_bits));
            (raw.clone(), raw)
        }
        MeasureId::RatioAvg => {
            let raw = per_epoch(&|t| pair_average(recording, t, softmax_ratio));
            (raw.clone(), raw)
        }
        MeasureId::StdAvg => {
            let raw = per_epoch(&|t| pair_average(recording, t, softmax_spread));
            let s = raw.iter().map(|v| -v).collect();
            (raw, s)
        }
        MeasureId::MaxMajority => {
            let raw = per_epoch(&|t| majority_max(recording, t));
            let s = raw.iter().map(|v| -v).collect();
            (raw, s)
        }
        MeasureId::StdMajority => {
            let raw = per_epoch(&|t| softmax_spread(&recording.majority_softmax(t)));
            let s = raw.iter().map(|v| -v).collect();
            (raw, s)
        }
        MeasureId::PctMu => {
            let s = descending_rank_scores(&per_epoch(&|t| majority_max(recording, t)));
            (s.clone(), s)
        }
        MeasureId::PctSigma => {
            let base = per_epoch(&|t| softmax_spread(&recording.majority_softmax(t)));
            let s = descending_rank_scores(&base);
            (s.clone(), s)
        }
    };
    UncertaintyScoreSeries {
        recording_id: recording.recording_id.clone(),
        source: ScoreSource::Measure(measure),
        scores,
        raw_values: raw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::recording;
    use crate::data::StageLabel;

    fn single(p: [f32; 5]) -> Recording {
        recording("r", vec![StageLabel::W], vec![vec![p]])
    }

    fn raw(m: MeasureId, rec: &Recording) -> f64 {
        compute_measure(m, rec).raw_values[0]
    }

    #[test]
    fn uniform_softmax() {
        let rec = single([0.2; 5]);
        assert!((raw(MeasureId::EntropyAvg, &rec) - 5f64.log2()).abs() < 1e-6);
        assert!((raw(MeasureId::RatioAvg, &rec) - 1.0).abs() < 1e-6);
        assert!(raw(MeasureId::StdAvg, &rec).abs() < 1e-7);
        assert!((raw(MeasureId::MaxMajority, &rec) - 0.2).abs() < 1e-7);
        assert!(raw(MeasureId::StdMajority, &rec).abs() < 1e-7);
    }

    #[test]
    fn one_hot_softmax() {
        let rec = single([1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(raw(MeasureId::EntropyAvg, &rec), 0.0);
        assert_eq!(raw(MeasureId::RatioAvg, &rec), 0.2);
        assert!((raw(MeasureId::StdAvg, &rec) - 0.4).abs() < 1e-12);
        assert_eq!(raw(MeasureId::MaxMajority, &rec), 1.0);
        assert!((raw(MeasureId::StdMajority, &rec) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn scalar_examples() {
        let ratio = softmax_ratio(&[0.5, 0.2, 0.1, 0.1, 0.1]);
        assert!((ratio - 0.4).abs() < 1e-12);
        let spread = softmax_spread(&[0.6, 0.1, 0.1, 0.1, 0.1]);
        assert!((spread - 0.2).abs() < 1e-12);
    }

    #[test]
    fn orientation() {
        let rec = recording(
            "r",
            vec![StageLabel::W; 2],
            vec![vec![[0.9, 0.025, 0.025, 0.025, 0.025], [0.4, 0.3, 0.1, 0.1, 0.1]]],
        );
        for m in MeasureId::ALL {
            let s = compute_measure(m, &rec).scores;
            assert!(s[1] > s[0], "{m}: confident epoch should score lower");
        }
    }

    #[test]
    fn pct_scores_rank_within_recording() {
        let rec = recording(
            "r",
            vec![StageLabel::W; 4],
            vec![vec![
                [0.9, 0.025, 0.025, 0.025, 0.025],
                [0.3, 0.25, 0.15, 0.15, 0.15],
                [0.6, 0.1, 0.1, 0.1, 0.1],
                [0.6, 0.1, 0.1, 0.1, 0.1],
            ]],
        );
        let s = compute_measure(MeasureId::PctMu, &rec).scores;
        assert_eq!(s, vec![0.25, 1.0, 0.625, 0.625]);
    }

    #[test]
    fn names_parse() {
        for m in MeasureId::ALL {
            assert_eq!(m.name().parse::<MeasureId>().unwrap(), m);
        }
        assert!("nope".parse::<MeasureId>().is_err());
    }
}
