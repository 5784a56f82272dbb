use std::fs;

use proptest::prelude::*;
use sleepconf::data::{decode_recording, encode_recording, load_dataset, save_dataset, HEADER_LEN};
use sleepconf::synth::{gen_cohort, GenConfig};
use sleepconf::{DomainTag, Error, PairOutput, Recording, StageLabel};

fn bits_row() -> impl Strategy<Value = [f32; 5]> {
    prop::array::uniform5(any::<u32>()).prop_map(|b| b.map(f32::from_bits))
}

fn label() -> impl Strategy<Value = StageLabel> {
    (0u8..6).prop_map(|c| StageLabel::from_code(if c == 5 { 255 } else { c }).unwrap())
}

/// Arbitrary payloads, including NaN and infinite floats; the codec must not care.
fn payload() -> impl Strategy<Value = Recording> {
    (0usize..40, 1usize..4, any::<bool>(), any::<bool>()).prop_flat_map(|(t, m, with_labels, with_hidden)| {
        let pair = (
            prop::collection::vec(bits_row(), t),
            prop::collection::vec(bits_row(), t),
        )
            .prop_map(move |(softmax, hidden)| PairOutput {
                softmax,
                hidden: with_hidden.then_some(hidden),
            });
        (prop::collection::vec(label(), t), prop::collection::vec(pair, m)).prop_map(
            move |(labels, pairs)| Recording {
                recording_id: "p".into(),
                subject_id: "s".into(),
                scorer_id: "x".into(),
                domain_tag: DomainTag::IdTest,
                diagnoses: Default::default(),
                labels: with_labels.then_some(labels),
                pairs,
            },
        )
    })
}

fn bits(rec_pairs: &[PairOutput]) -> Vec<u32> {
    let mut out = Vec::new();
    for p in rec_pairs {
        out.extend(p.softmax.iter().flatten().map(|v| v.to_bits()));
        if let Some(h) = &p.hidden {
            out.extend(h.iter().flatten().map(|v| v.to_bits()));
        }
    }
    out
}

proptest! {
    #[test]
    fn encode_decode_is_bit_exact(rec in payload()) {
        let bytes = encode_recording(&rec);
        let back = decode_recording(&bytes, "p.hpnc").unwrap();
        prop_assert_eq!(&back.labels, &rec.labels);
        prop_assert_eq!(back.pairs.len(), rec.pairs.len());
        prop_assert_eq!(bits(&back.pairs), bits(&rec.pairs));
        for (a, b) in back.pairs.iter().zip(&rec.pairs) {
            prop_assert_eq!(a.hidden.is_some(), b.hidden.is_some());
        }
    }

    #[test]
    fn every_truncation_is_rejected(rec in payload(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_recording(&rec);
        let len = cut.index(bytes.len());
        let err = decode_recording(&bytes[..len], "p.hpnc").unwrap_err();
        let typed = matches!(err, Error::Format { .. });
        prop_assert!(typed, "{}", err);
    }

    #[test]
    fn trailing_bytes_are_rejected(rec in payload(), extra in 1usize..9) {
        let mut bytes = encode_recording(&rec);
        bytes.extend(std::iter::repeat(0u8).take(extra));
        let typed = matches!(decode_recording(&bytes, "p.hpnc"), Err(Error::Format { .. }));
        prop_assert!(typed);
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = GenConfig {
        n_recordings: 5,
        epochs_per_recording: 50,
        n_pairs: 2,
        seed: 3,
        ..GenConfig::default()
    };
    let data = gen_cohort(&config).unwrap();
    save_dataset(&data, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), data);

    // a container whose length disagrees with the manifest is refused
    let first = dir.path().join("rec0000.hpnc");
    let mut bytes = fs::read(&first).unwrap();
    bytes.truncate(HEADER_LEN + 10);
    fs::write(&first, bytes).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}
