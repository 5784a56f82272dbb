//! Domain types for scored recordings, the `.hpnc` classifier-output
//! container and the `manifest.json` metadata file.
//!
//! A dataset on disk is a directory holding `manifest.json` and one
//! `<recording_id>.hpnc` per recording. The container layout
//! (little-endian) is:
//!
//! ```text
//! "HPNC" | u16 version=1 | u16 reserved=0 | u32 T | u16 M | u16 K=5 | u8 flags | 7 pad
//! T label bytes                                  (flags bit0)
//! for each pair: T*K f32 softmax, T*K f32 hidden (flags bit1)
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const N_STAGES: usize = 5;
pub const CONTAINER_MAGIC: &[u8; 4] = b"HPNC";
pub const CONTAINER_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const MANIFEST_FILE: &str = "manifest.json";

const FLAG_LABELS: u8 = 0b01;
const FLAG_HIDDENS: u8 = 0b10;
const SOFTMAX_SUM_TOL: f64 = 1e-5;

/// Sleep stage as stored in the container. Class indices follow W, N1, N2, N3, REM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageLabel {
    W,
    N1,
    N2,
    N3,
    Rem,
    Unknown,
}

impl StageLabel {
    pub const SCORED: [StageLabel; N_STAGES] = [
        StageLabel::W,
        StageLabel::N1,
        StageLabel::N2,
        StageLabel::N3,
        StageLabel::Rem,
    ];

    pub fn code(self) -> u8 {
        match self {
            StageLabel::W => 0,
            StageLabel::N1 => 1,
            StageLabel::N2 => 2,
            StageLabel::N3 => 3,
            StageLabel::Rem => 4,
            StageLabel::Unknown => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0..=4 => Some(Self::SCORED[code as usize]),
            255 => Some(StageLabel::Unknown),
            _ => None,
        }
    }

    /// Class index in `0..5`, `None` for Unknown.
    pub fn index(self) -> Option<usize> {
        match self {
            StageLabel::Unknown => None,
            s => Some(s.code() as usize),
        }
    }

    /// Panics if `index >= 5`.
    pub fn from_index(index: usize) -> Self {
        Self::SCORED[index]
    }

    pub fn is_scored(self) -> bool {
        self != StageLabel::Unknown
    }

    pub fn name(self) -> &'static str {
        match self {
            StageLabel::W => "W",
            StageLabel::N1 => "N1",
            StageLabel::N2 => "N2",
            StageLabel::N3 => "N3",
            StageLabel::Rem => "REM",
            StageLabel::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W" | "WAKE" => Ok(StageLabel::W),
            "N1" => Ok(StageLabel::N1),
            "N2" => Ok(StageLabel::N2),
            "N3" => Ok(StageLabel::N3),
            "REM" | "R" => Ok(StageLabel::Rem),
            "UNKNOWN" | "?" => Ok(StageLabel::Unknown),
            other => other
                .parse::<u8>()
                .ok()
                .and_then(StageLabel::from_code)
                .ok_or_else(|| Error::InvalidDataset(format!("unknown stage label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainTag {
    #[serde(rename = "ID_TRAIN")]
    IdTrain,
    #[serde(rename = "ID_VAL")]
    IdVal,
    #[serde(rename = "ID_TEST")]
    IdTest,
    #[serde(rename = "OOD1")]
    Ood1,
    #[serde(rename = "OOD2")]
    Ood2,
}

impl DomainTag {
    pub const ALL: [DomainTag; 5] = [
        DomainTag::IdTrain,
        DomainTag::IdVal,
        DomainTag::IdTest,
        DomainTag::Ood1,
        DomainTag::Ood2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainTag::IdTrain => "ID_TRAIN",
            DomainTag::IdVal => "ID_VAL",
            DomainTag::IdTest => "ID_TEST",
            DomainTag::Ood1 => "OOD1",
            DomainTag::Ood2 => "OOD2",
        }
    }

    /// Held-out splits used for evaluation.
    pub fn is_evaluation(self) -> bool {
        matches!(self, DomainTag::IdTest | DomainTag::Ood1 | DomainTag::Ood2)
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Diagnosis classes used to group subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Diagnosis {
    He,
    Ins,
    Sdb,
    Cdh,
    Crd,
    Psd,
    Smd,
    Is,
    Dss,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 9] = [
        Diagnosis::He,
        Diagnosis::Ins,
        Diagnosis::Sdb,
        Diagnosis::Cdh,
        Diagnosis::Crd,
        Diagnosis::Psd,
        Diagnosis::Smd,
        Diagnosis::Is,
        Diagnosis::Dss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagnosis::He => "HE",
            Diagnosis::Ins => "INS",
            Diagnosis::Sdb => "SDB",
            Diagnosis::Cdh => "CDH",
            Diagnosis::Crd => "CRD",
            Diagnosis::Psd => "PSD",
            Diagnosis::Smd => "SMD",
            Diagnosis::Is => "IS",
            Diagnosis::Dss => "DSS",
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifier output of one channel pair over a whole recording.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutput {
    pub softmax: Vec<[f32; N_STAGES]>,
    pub hidden: Option<Vec<[f32; N_STAGES]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub recording_id: String,
    pub subject_id: String,
    pub scorer_id: String,
    pub domain_tag: DomainTag,
    pub diagnoses: BTreeSet<Diagnosis>,
    pub labels: Option<Vec<StageLabel>>,
    pub pairs: Vec<PairOutput>,
}

impl Recording {
    pub fn n_epochs(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.softmax.len())
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn has_hiddens(&self) -> bool {
        self.pairs.iter().all(|p| p.hidden.is_some())
    }

    pub fn labels(&self) -> Result<&[StageLabel]> {
        self.labels.as_deref().ok_or_else(|| self.invalid("recording has no reference labels"))
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidRecording {
            recording_id: self.recording_id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_id(&self.recording_id).map_err(|r| self.invalid(r))?;
        if self.subject_id.is_empty() {
            return Err(self.invalid("empty subject_id"));
        }
        if self.pairs.is_empty() {
            return Err(self.invalid("no channel pairs (M = 0)"));
        }
        if self.pairs.len() > u16::MAX as usize {
            return Err(self.invalid("too many channel pairs"));
        }
        let t = self.n_epochs();
        if t == 0 {
            return Err(self.invalid("no epochs (T = 0)"));
        }
        if t > u32::MAX as usize {
            return Err(self.invalid("too many epochs"));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != t {
                return Err(self.invalid(format!("{} labels for {t} epochs", labels.len())));
            }
        }
        let with_hidden = self.pairs.iter().filter(|p| p.hidden.is_some()).count();
        if with_hidden != 0 && with_hidden != self.pairs.len() {
            return Err(self.invalid("hidden features present for only some channel pairs"));
        }
        for (m, pair) in self.pairs.iter().enumerate() {
            if pair.softmax.len() != t {
                return Err(self.invalid(format!(
                    "channel pair {m} has {} epochs, expected {t}",
                    pair.softmax.len()
                )));
            }
            for (e, row) in pair.softmax.iter().enumerate() {
                if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                    return Err(self.invalid(format!(
                        "channel pair {m}, epoch {e}: softmax has negative or non-finite component"
                    )));
                }
                let sum: f64 = row.iter().map(|&p| p as f64).sum();
                if (sum - 1.0).abs() > SOFTMAX_SUM_TOL {
                    return Err(self.invalid(format!(
                        "channel pair {m}, epoch {e}: softmax sums to {sum}"
                    )));
                }
            }
            if let Some(hidden) = &pair.hidden {
                if hidden.len() != t {
                    return Err(self.invalid(format!(
                        "channel pair {m} has {} hidden rows, expected {t}",
                        hidden.len()
                    )));
                }
                if let Some(e) = hidden.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
                    return Err(self.invalid(format!(
                        "channel pair {m}, epoch {e}: non-finite hidden feature"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean softmax over channel pairs at one epoch.
    pub fn majority_softmax(&self, epoch: usize) -> [f64; N_STAGES] {
        let mut acc = [0.0f64; N_STAGES];
        for pair in &self.pairs {
            for (a, &p) in acc.iter_mut().zip(pair.softmax[epoch].iter()) {
                *a += p as f64;
            }
        }
        let m = self.pairs.len() as f64;
        acc.map(|a| a / m)
    }
}

fn validate_id(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() {
        return Err("empty recording_id".into());
    }
    if id.starts_with('.') || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        return Err(format!("recording_id {id:?} is not a safe file stem"));
    }
    Ok(())
}

/// Index of the largest component; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Majority-vote prediction: argmax of the pair-averaged softmax per epoch.
pub fn predicted_hypnogram(recording: &Recording) -> Vec<StageLabel> {
    (0..recording.n_epochs())
        .map(|t| StageLabel::from_index(argmax(&recording.majority_softmax(t))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub subject_id: String,
    pub scorer_id: String,
    pub domain_tag: DomainTag,
    pub diagnoses: Vec<Diagnosis>,
    pub file: String,
    pub n_epochs: u32,
    pub n_pairs: u16,
}

impl ManifestEntry {
    pub fn of(recording: &Recording) -> Self {
        ManifestEntry {
            recording_id: recording.recording_id.clone(),
            subject_id: recording.subject_id.clone(),
            scorer_id: recording.scorer_id.clone(),
            domain_tag: recording.domain_tag,
            diagnoses: recording.diagnoses.iter().copied().collect(),
            file: format!("{}.hpnc", recording.recording_id),
            n_epochs: recording.n_epochs() as u32,
            n_pairs: recording.n_pairs() as u16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub recordings: Vec<Recording>,
}

impl Dataset {
    pub fn new(recordings: Vec<Recording>) -> Self {
        Dataset { recordings }
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.recordings.iter().map(ManifestEntry::of).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for rec in &self.recordings {
            rec.validate()?;
            if !seen.insert(rec.recording_id.as_str()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate recording_id {}",
                    rec.recording_id
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, recording_id: &str) -> Option<&Recording> {
        self.recordings.iter().find(|r| r.recording_id == recording_id)
    }

    pub fn split(&self, tag: DomainTag) -> Vec<&Recording> {
        self.recordings.iter().filter(|r| r.domain_tag == tag).collect()
    }

    /// Domain tags present, in canonical order.
    pub fn tags(&self) -> Vec<DomainTag> {
        let present: BTreeSet<_> = self.recordings.iter().map(|r| r.domain_tag).collect();
        present.into_iter().collect()
    }
}

pub fn encode_recording(rec: &Recording) -> Vec<u8> {
    let t = rec.n_epochs();
    let has_hiddens = rec.has_hiddens();
    let mut flags = 0u8;
    if rec.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if has_hiddens {
        flags |= FLAG_HIDDENS;
    }
    let per_pair = t * N_STAGES * 4 * if has_hiddens { 2 } else { 1 };
    let mut buf = Vec::with_capacity(HEADER_LEN + t + rec.n_pairs() * per_pair);
    buf.extend_from_slice(CONTAINER_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(rec.n_pairs() as u16).to_le_bytes());
    buf.extend_from_slice(&(N_STAGES as u16).to_le_bytes());
    buf.push(flags);
    buf.extend_from_slice(&[0u8; 7]);
    if let Some(labels) = &rec.labels {
        buf.extend(labels.iter().map(|l| l.code()));
    }
    for pair in &rec.pairs {
        for row in &pair.softmax {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let (true, Some(hidden)) = (has_hiddens, &pair.hidden) {
            for row in hidden {
                for v in row {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    buf
}

/// Decoded container payload, before metadata from the manifest is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerPayload {
    pub labels: Option<Vec<StageLabel>>,
    pub pairs: Vec<PairOutput>,
}

pub fn decode_recording(bytes: &[u8], file: &str) -> Result<ContainerPayload> {
    let err = |reason: String| Error::format(file, reason);
    if bytes.len() < HEADER_LEN {
        return Err(err(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != CONTAINER_MAGIC {
        return Err(err(format!("bad magic {:?}", &bytes[0..4])));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != CONTAINER_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let t = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let m = u16_at(12) as usize;
    let k = u16_at(14) as usize;
    let flags = bytes[16];
    if k != N_STAGES {
        return Err(err(format!("expected K = {N_STAGES}, found {k}")));
    }
    if flags & !(FLAG_LABELS | FLAG_HIDDENS) != 0 {
        return Err(err(format!("unknown flag bits {flags:#04x}")));
    }
    let has_labels = flags & FLAG_LABELS != 0;
    let has_hiddens = flags & FLAG_HIDDENS != 0;
    let block = t * N_STAGES * 4;
    let expected = HEADER_LEN
        + if has_labels { t } else { 0 }
        + m * block * if has_hiddens { 2 } else { 1 };
    if bytes.len() < expected {
        return Err(err(format!("truncated payload: {} of {expected} bytes", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(err(format!("{} trailing bytes", bytes.len() - expected)));
    }

    let mut pos = HEADER_LEN;
    let labels = if has_labels {
        let mut labels = Vec::with_capacity(t);
        for (e, &code) in bytes[pos..pos + t].iter().enumerate() {
            labels.push(
                StageLabel::from_code(code)
                    .ok_or_else(|| err(format!("epoch {e}: invalid stage code {code}")))?,
            );
        }
        pos += t;
        Some(labels)
    } else {
        None
    };
    let read_block = |pos: usize| -> Vec<[f32; N_STAGES]> {
        bytes[pos..pos + block]
            .chunks_exact(N_STAGES * 4)
            .map(|row| {
                let mut out = [0f32; N_STAGES];
                for (o, c) in out.iter_mut().zip(row.chunks_exact(4)) {
                    *o = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                }
                out
            })
            .collect()
    };
    let mut pairs = Vec::with_capacity(m);
    for _ in 0..m {
        let softmax = read_block(pos);
        pos += block;
        let hidden = if has_hiddens {
            let h = read_block(pos);
            pos += block;
            Some(h)
        } else {
            None
        };
        pairs.push(PairOutput { softmax, hidden });
    }
    Ok(ContainerPayload { labels, pairs })
}

/// Write `manifest.json` and one container per recording into `directory`.
pub fn save_dataset(dataset: &Dataset, directory: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
    for rec in &dataset.recordings {
        let entry = ManifestEntry::of(rec);
        write_atomic(&directory.join(&entry.file), &encode_recording(rec))?;
    }
    save_manifest(&dataset.manifest(), directory)
}

pub fn save_manifest(manifest: &[ManifestEntry], directory: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    write_atomic(&directory.join(MANIFEST_FILE), &json)
}

pub fn load_manifest(directory: &Path) -> Result<Vec<ManifestEntry>> {
    let path = directory.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::format(MANIFEST_FILE, e.to_string()))
}

pub fn load_dataset(directory: &Path) -> Result<Dataset> {
    let manifest = load_manifest(directory)?;
    let mut recordings = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let path = directory.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let payload = decode_recording(&bytes, &entry.file)?;
        let rec = Recording {
            recording_id: entry.recording_id.clone(),
            subject_id: entry.subject_id.clone(),
            scorer_id: entry.scorer_id.clone(),
            domain_tag: entry.domain_tag,
            diagnoses: entry.diagnoses.iter().copied().collect(),
            labels: payload.labels,
            pairs: payload.pairs,
        };
        if rec.n_epochs() != entry.n_epochs as usize || rec.n_pairs() != entry.n_pairs as usize {
            return Err(Error::InvalidDataset(format!(
                "{}: manifest says T={} M={}, payload has T={} M={}",
                entry.file,
                entry.n_epochs,
                entry.n_pairs,
                rec.n_epochs(),
                rec.n_pairs()
            )));
        }
        recordings.push(rec);
    }
    let dataset = Dataset { recordings };
    dataset.validate()?;
    Ok(dataset)
}
