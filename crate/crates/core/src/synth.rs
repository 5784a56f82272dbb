//! Synthetic cohorts: Markov hypnograms plus a mock classifier whose
//! confidence and error rate are driven by a smoothed per-epoch difficulty.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    argmax, Dataset, Diagnosis, DomainTag, PairOutput, Recording, StageLabel, N_STAGES,
};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Smallest softmax component emitted by the generator.
const MIN_PROB: f64 = 1e-6;
/// Dirichlet precision of each pair around the shared epoch distribution.
const PAIR_PRECISION: f64 = 150.0;
const HIDDEN_NOISE_SD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_recordings: usize,
    pub epochs_per_recording: usize,
    pub n_pairs: usize,
    pub target_error_rate: f64,
    pub stay_probability: f64,
    pub difficulty_window: usize,
    pub unknown_rate: f64,
    pub alpha_max: f64,
    pub alpha_min: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_recordings: 50,
            epochs_per_recording: 960,
            n_pairs: 2,
            target_error_rate: 0.18,
            stay_probability: 0.85,
            difficulty_window: 15,
            unknown_rate: 0.01,
            alpha_max: 30.0,
            alpha_min: 2.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.target_error_rate) {
            return bad("target_error_rate must lie in [0, 1]");
        }
        if !(self.stay_probability > 0.0 && self.stay_probability < 1.0) {
            return bad("stay_probability must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.unknown_rate) {
            return bad("unknown_rate must lie in [0, 1)");
        }
        if self.difficulty_window == 0 {
            return bad("difficulty_window must be at least 1");
        }
        if self.epochs_per_recording == 0 || self.n_pairs == 0 {
            return bad("epochs_per_recording and n_pairs must be at least 1");
        }
        if self.n_pairs > u16::MAX as usize || self.epochs_per_recording > u32::MAX as usize {
            return bad("n_pairs or epochs_per_recording exceeds the container limits");
        }
        if !(self.alpha_min > 0.0 && self.alpha_max >= self.alpha_min) {
            return bad("need 0 < alpha_min <= alpha_max");
        }
        Ok(())
    }

    /// Concentration of the predicted class at difficulty `delta`.
    pub fn alpha(&self, delta: f64) -> f64 {
        self.alpha_max - (self.alpha_max - self.alpha_min) * delta
    }
}

/// Stages reachable from `stage` in one non-self transition.
pub fn adjacent_stages(stage: StageLabel) -> &'static [StageLabel] {
    use StageLabel::*;
    match stage {
        W => &[N1],
        N1 => &[W, N2, Rem],
        N2 => &[N1, N3, Rem],
        N3 => &[N2],
        Rem => &[N1, N2],
        Unknown => &[],
    }
}

fn markov_chain<R: Rng>(len: usize, stay_probability: f64, rng: &mut R) -> Vec<StageLabel> {
    let mut out = Vec::with_capacity(len);
    let mut stage = StageLabel::W;
    for t in 0..len {
        if t > 0 && rng.gen::<f64>() >= stay_probability {
            let next = adjacent_stages(stage);
            stage = next[rng.gen_range(0..next.len())];
        }
        out.push(stage);
    }
    out
}

/// First-order Markov hypnogram starting in W.
pub fn gen_hypnogram(len: usize, stay_probability: f64, seed: u64) -> Vec<StageLabel> {
    markov_chain(len, stay_probability, &mut stream_rng(seed, u64::MAX))
}

/// Window mean of uniform draws, mapped to within-recording fractional ranks
/// in (0, 1) so that difficulty is uniform per recording.
fn difficulty<R: Rng>(len: usize, window: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen()).collect();
    let half = window / 2;
    let smooth: Vec<f64> = (0..len)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + window - half).min(len);
            raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    crate::stats::fractional_ranks(&smooth)
        .into_iter()
        .map(|r| (r - 0.5) / len as f64)
        .collect()
}

/// Flip probability at difficulty `delta`; averages to `rate` over uniform `delta`.
fn flip_probability(delta: f64, rate: f64) -> f64 {
    if rate <= 0.0 {
        0.0
    } else if rate >= 1.0 {
        1.0
    } else {
        delta.powf((1.0 - rate) / rate)
    }
}

fn dirichlet<R: Rng>(params: &[f64; N_STAGES], rng: &mut R) -> [f64; N_STAGES] {
    let mut out = [0.0; N_STAGES];
    for (o, &a) in out.iter_mut().zip(params) {
        *o = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    }
    normalize_floor(&mut out);
    out
}

fn normalize_floor(p: &mut [f64; N_STAGES]) {
    let sum: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v = (*v / sum).max(MIN_PROB);
    }
    let sum: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= sum;
    }
}

/// Move the largest component to `class` by swapping.
fn force_argmax(p: &mut [f64; N_STAGES], class: usize) {
    let top = argmax(p);
    if top != class && p[top] >= p[class] {
        p.swap(top, class);
    }
}

fn to_f32_row(p: &[f64; N_STAGES]) -> [f32; N_STAGES] {
    p.map(|v| v as f32)
}

fn diagnoses_for<R: Rng>(rng: &mut R) -> BTreeSet<Diagnosis> {
    let mut set = BTreeSet::new();
    if rng.gen::<f64>() < 0.2 {
        set.insert(Diagnosis::He);
        return set;
    }
    let disorders = &Diagnosis::ALL[1..];
    let n = if rng.gen::<f64>() < 0.35 { 2 } else { 1 };
    for d in disorders.choose_multiple(rng, n) {
        set.insert(*d);
    }
    set
}

/// One synthetic recording; `index` selects the RNG stream.
pub fn gen_recording(config: &GenConfig, index: usize) -> Recording {
    gen_recording_with_difficulty(config, index).0
}

/// Like [`gen_recording`], also returning the per-epoch difficulty used.
pub fn gen_recording_with_difficulty(config: &GenConfig, index: usize) -> (Recording, Vec<f64>) {
    let mut rng = stream_rng(config.seed, index as u64);
    let t_len = config.epochs_per_recording;
    let truth = markov_chain(t_len, config.stay_probability, &mut rng);
    let delta = difficulty(t_len, config.difficulty_window, &mut rng);
    let noise = Normal::new(0.0, HIDDEN_NOISE_SD).expect("valid sd");

    let mut pairs: Vec<PairOutput> = (0..config.n_pairs)
        .map(|_| PairOutput {
            softmax: Vec::with_capacity(t_len),
            hidden: Some(Vec::with_capacity(t_len)),
        })
        .collect();

    for t in 0..t_len {
        let true_class = truth[t].index().expect("generated stages are scored");
        let flip = rng.gen::<f64>() < flip_probability(delta[t], config.target_error_rate);
        let pred_class = if flip {
            let next = adjacent_stages(truth[t]);
            next[rng.gen_range(0..next.len())].code() as usize
        } else {
            true_class
        };
        let alpha = config.alpha(delta[t]);
        let mut params = [1.0; N_STAGES];
        params[pred_class] = alpha;
        if flip {
            // the true stage stays a strong runner-up
            params[true_class] = alpha * rng.gen_range(0.3..0.9);
        }
        let mut shared = dirichlet(&params, &mut rng);
        force_argmax(&mut shared, pred_class);

        for pair in pairs.iter_mut() {
            let mut p = dirichlet(&shared.map(|s| s * PAIR_PRECISION), &mut rng);
            force_argmax(&mut p, pred_class);
            let logs = p.map(f64::ln);
            let mean_log = logs.iter().sum::<f64>() / N_STAGES as f64;
            let hidden = logs.map(|l| (l - mean_log + noise.sample(&mut rng)) as f32);
            pair.softmax.push(to_f32_row(&p));
            pair.hidden.as_mut().expect("hidden allocated").push(hidden);
        }
    }

    let labels = truth
        .iter()
        .map(|&s| {
            if rng.gen::<f64>() < config.unknown_rate {
                StageLabel::Unknown
            } else {
                s
            }
        })
        .collect();

    let recording = Recording {
        recording_id: format!("rec{index:04}"),
        subject_id: format!("subj{index:04}"),
        scorer_id: format!("scorer{}", index % 4),
        domain_tag: DomainTag::IdTest,
        diagnoses: diagnoses_for(&mut rng),
        labels: Some(labels),
        pairs,
    };
    (recording, delta)
}

/// Synthetic cohort; every recording is tagged ID_TEST until a split is applied.
pub fn gen_cohort(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    Ok(Dataset::new(
        (0..config.n_recordings).map(|i| gen_recording(config, i)).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitRatios { train, val, test }
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("split ratios {s:?}: {e}")))?;
        match parts.as_slice() {
            [a, b, c] => Ok(SplitRatios::new(*a, *b, *c)),
            _ => Err(Error::InvalidConfig(format!(
                "split ratios {s:?}: expected train,val,test"
            ))),
        }
    }
}

/// Largest-remainder apportionment of `n` items; every nonzero ratio gets at least one.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut rema = [(0.0f64, 0usize); 3];
    for i in 0..3 {
        let exact = ratios[i] * n as f64;
        // guard against 0.8 * 10 = 7.999...
        let floor = (exact + 1e-9).floor();
        counts[i] = floor as usize;
        rema[i] = (exact - floor, i);
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rema.iter().cycle().take(3 * n) {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Assign each recording a train/val/test tag by subject.
pub fn split_manifest(
    dataset: &Dataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<BTreeMap<String, DomainTag>> {
    let r = [ratios.train, ratios.val, ratios.test];
    if r.iter().any(|v| !v.is_finite() || *v < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios {r:?} must be non-negative and sum to 1"
        )));
    }
    let mut subjects: Vec<&str> = dataset
        .recordings
        .iter()
        .map(|r| r.subject_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let buckets = r.iter().filter(|v| **v > 0.0).count();
    if subjects.len() < buckets {
        return Err(Error::Insufficient(format!(
            "{} subjects for {buckets} nonzero split buckets",
            subjects.len()
        )));
    }
    subjects.shuffle(&mut stream_rng(seed, 0));
    let counts = apportion(subjects.len(), &r);
    let tags = [DomainTag::IdTrain, DomainTag::IdVal, DomainTag::IdTest];
    let mut by_subject = BTreeMap::new();
    let mut it = subjects.into_iter();
    for (tag, count) in tags.iter().zip(counts) {
        for subject in it.by_ref().take(count) {
            by_subject.insert(subject, *tag);
        }
    }
    Ok(dataset
        .recordings
        .iter()
        .map(|r| (r.recording_id.clone(), by_subject[r.subject_id.as_str()]))
        .collect())
}

pub fn apply_split(dataset: &mut Dataset, assignment: &BTreeMap<String, DomainTag>) {
    for rec in &mut dataset.recordings {
        if let Some(tag) = assignment.get(&rec.recording_id) {
            rec.domain_tag = *tag;
        }
    }
}
