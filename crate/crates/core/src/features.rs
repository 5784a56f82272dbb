//! Confidence-network inputs and true-class-probability targets.
//!
//! Each row has 14 columns: four additive log-ratios of the pair softmax
//! (REM as reference), a one-of-five code of the majority-vote class, and
//! the pair's five hidden features.

use crate::data::{argmax, Recording, StageLabel, N_STAGES};
use crate::error::{Error, Result};

pub const FEATURE_DIM: usize = 14;
pub const ALR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub recording_id: String,
    pub pair_index: usize,
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub targets: Option<Vec<f64>>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Additive log-ratio transform against the last component, after clamping to `ALR_EPS`.
pub fn alr_transform(softmax: &[f64; N_STAGES]) -> [f64; N_STAGES - 1] {
    let mut p = softmax.map(|v| v.max(ALR_EPS));
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    let reference = p[N_STAGES - 1];
    [
        (p[0] / reference).ln(),
        (p[1] / reference).ln(),
        (p[2] / reference).ln(),
        (p[3] / reference).ln(),
    ]
}

/// Majority softmax at the true class; 0 for Unknown.
pub fn tcp_target(softmax_majority: &[f64; N_STAGES], true_label: StageLabel) -> f64 {
    true_label.index().map_or(0.0, |k| softmax_majority[k])
}

/// One feature sequence per channel pair. Targets are filled when labels exist.
pub fn assemble_features(recording: &Recording) -> Result<Vec<FeatureSequence>> {
    let t_len = recording.n_epochs();
    let majority: Vec<[f64; N_STAGES]> =
        (0..t_len).map(|t| recording.majority_softmax(t)).collect();
    let targets = recording.labels.as_ref().map(|labels| {
        majority
            .iter()
            .zip(labels)
            .map(|(p, &l)| tcp_target(p, l))
            .collect::<Vec<f64>>()
    });
    recording
        .pairs
        .iter()
        .enumerate()
        .map(|(m, pair)| {
            let hidden = pair.hidden.as_ref().ok_or_else(|| Error::InvalidRecording {
                recording_id: recording.recording_id.clone(),
                reason: format!("channel pair {m} has no hidden features"),
            })?;
            let features = (0..t_len)
                .map(|t| {
                    let mut row = [0.0; FEATURE_DIM];
                    let alr = alr_transform(&pair.softmax[t].map(|v| v as f64));
                    row[..4].copy_from_slice(&alr);
                    row[4 + argmax(&majority[t])] = 1.0;
                    for (dst, &h) in row[9..].iter_mut().zip(hidden[t].iter()) {
                        *dst = h as f64;
                    }
                    row
                })
                .collect();
            Ok(FeatureSequence {
                recording_id: recording.recording_id.clone(),
                pair_index: m,
                features,
                targets: targets.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::recording;

    #[test]
    fn alr_uniform_is_zero() {
        assert_eq!(alr_transform(&[0.2; 5]), [0.0; 4]);
    }

    #[test]
    fn alr_worked_example() {
        let out = alr_transform(&[0.4, 0.1, 0.1, 0.1, 0.3]);
        let expect = [0.287682072451781, -1.09861228866811, -1.09861228866811, -1.09861228866811];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn alr_one_hot_is_finite() {
        let out = alr_transform(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out[0] - (1.0f64 / ALR_EPS).ln()).abs() < 1e-6);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn tcp_examples() {
        assert_eq!(tcp_target(&[0.1, 0.6, 0.1, 0.1, 0.1], StageLabel::N1), 0.6);
        assert_eq!(tcp_target(&[0.2, 0.5, 0.1, 0.1, 0.1], StageLabel::W), 0.2);
        assert_eq!(tcp_target(&[0.2, 0.5, 0.1, 0.1, 0.1], StageLabel::Unknown), 0.0);
    }

    #[test]
    fn single_row_assembly() {
        let rec = recording("r", vec![StageLabel::N1], vec![vec![[0.1, 0.6, 0.1, 0.1, 0.1]]]);
        let seqs = assemble_features(&rec).unwrap();
        assert_eq!(seqs.len(), 1);
        let row = seqs[0].features[0];
        let alr = alr_transform(&rec.pairs[0].softmax[0].map(|v| v as f64));
        assert_eq!(&row[..4], &alr);
        assert_eq!(&row[4..9], &[0.0, 1.0, 0.0, 0.0, 0.0]);
        let h = rec.pairs[0].hidden.as_ref().unwrap()[0];
        for k in 0..5 {
            assert_eq!(row[9 + k], h[k] as f64);
        }
        assert!((seqs[0].targets.as_ref().unwrap()[0] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn class_code_uses_majority() {
        let rec = recording(
            "r",
            vec![StageLabel::W],
            vec![vec![[0.6, 0.4, 0.0, 0.0, 0.0]], vec![[0.3, 0.5, 0.1, 0.05, 0.05]]],
        );
        let seqs = assemble_features(&rec).unwrap();
        assert_eq!(seqs.len(), 2);
        for s in &seqs {
            assert_eq!(&s.features[0][4..9], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn missing_hiddens_rejected() {
        let mut rec = recording("r", vec![StageLabel::W], vec![vec![[0.2; 5]]]);
        rec.pairs[0].hidden = None;
        assert!(assemble_features(&rec).is_err());
    }
}
