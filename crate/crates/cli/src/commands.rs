use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sleepconf::bootstrap::{
    bootstrap_correlation, bootstrap_mean_diff, summarize_subjects, Correlation, Group, SubjectMetric,
    SubjectSummary,
};
use sleepconf::confnet::{self, ConfNetConfig, TrainConfig};
use sleepconf::data::{self, predicted_hypnogram};
use sleepconf::features::tcp_target;
use sleepconf::io::{csv_bytes, json_bytes, write_atomic};
use sleepconf::measures::{compute_measure, MeasureId};
use sleepconf::metrics::{
    confusion_matrix, discordance_roc_pr, subject_aggregate, MetricReport, MetricSummary, SubjectAggregate,
};
use sleepconf::render::{render_confidence_hypnogram, RenderSpec};
use sleepconf::review::{effort_to_benchmark, sweep, BenchmarkRow, ReviewPool};
use sleepconf::scores::{read_scores_csv, scores_csv, ScoreTable};
use sleepconf::synth::{self, GenConfig, SplitRatios};
use sleepconf::{Dataset, Diagnosis, DomainTag, Error, Recording, ScoreSource, StageLabel, UncertaintyScoreSeries};

use crate::{
    BootstrapArgs, Command, EvalArgs, GenArgs, GroupBy, HypothesisArg, MeasuresArgs, MetricArg, MetricsArgs,
    PredictArgs, RenderArgs, SimulateArgs, TcpArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Measures(a) => measures(a),
        Command::Tcp(a) => tcp(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Metrics(a) => metrics(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Simulate(a) => simulate(a),
        Command::Render(a) => render(a),
    }
}

fn load(dir: &Path) -> Result<Dataset> {
    data::load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_scores(path: &Path) -> Result<ScoreTable> {
    read_scores_csv(path).with_context(|| format!("reading scores {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// ID_TEST, OOD1 and OOD2 recordings by split, or every recording under
/// "ALL" when none of those tags is present.
fn evaluation_splits(dataset: &Dataset) -> Vec<(String, Vec<&Recording>)> {
    let splits: Vec<_> = dataset
        .tags()
        .into_iter()
        .filter(|t| t.is_evaluation())
        .map(|t| (t.name().to_string(), dataset.split(t)))
        .collect();
    if splits.is_empty() {
        vec![("ALL".to_string(), dataset.recordings.iter().collect())]
    } else {
        splits
    }
}

/// Predicted TCP if the table has it, else the label-derived target.
fn tcp_series(table: &ScoreTable) -> Result<&BTreeMap<String, UncertaintyScoreSeries>> {
    table
        .get(&ScoreSource::Tcp)
        .or_else(|| table.get(&ScoreSource::TcpTarget))
        .ok_or_else(|| Error::Insufficient("scores file holds no TCP or TCP_TARGET series".into()).into())
}

fn check_length(rec: &Recording, series: &UncertaintyScoreSeries) -> Result<()> {
    if series.scores.len() != rec.n_epochs() {
        return Err(Error::Shape(format!(
            "{}: {} scores for {} epochs",
            rec.recording_id,
            series.scores.len(),
            rec.n_epochs()
        ))
        .into());
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let config = GenConfig {
        n_recordings: a.recordings,
        epochs_per_recording: a.epochs,
        n_pairs: a.pairs,
        target_error_rate: a.error_rate,
        stay_probability: a.stay_prob,
        unknown_rate: a.unknown_rate,
        seed: a.seed,
        ..GenConfig::default()
    };
    let dataset = synth::gen_cohort(&config)?;
    data::save_dataset(&dataset, &a.out).with_context(|| format!("saving dataset {}", a.out.display()))
}

fn measures(a: MeasuresArgs) -> Result<()> {
    let ids: Vec<MeasureId> = if a.measure.eq_ignore_ascii_case("all") {
        MeasureId::ALL.to_vec()
    } else {
        a.measure
            .split(',')
            .map(str::parse)
            .collect::<sleepconf::Result<_>>()?
    };
    let dataset = load(&a.data)?;
    let series: Vec<_> = dataset
        .recordings
        .iter()
        .flat_map(|rec| ids.iter().map(move |&m| compute_measure(m, rec)))
        .collect();
    write(&a.out, &scores_csv(&series)?)
}

fn tcp(a: TcpArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let mut series = Vec::with_capacity(dataset.recordings.len());
    for rec in &dataset.recordings {
        let labels = rec.labels()?;
        let values = labels
            .iter()
            .enumerate()
            .map(|(t, &l)| tcp_target(&rec.majority_softmax(t), l))
            .collect();
        series.push(UncertaintyScoreSeries::from_tcp(&rec.recording_id, ScoreSource::TcpTarget, values));
    }
    write(&a.out, &scores_csv(&series)?)
}

fn history_path(model_out: &Path) -> PathBuf {
    let stem = model_out.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    model_out.with_file_name(format!("{stem}.history.csv"))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a Path,
    history: &'a Path,
    param_count: usize,
    epochs_run: usize,
    best_epoch: usize,
    initial_val_mae: f64,
    best_val_mae: f64,
    split_subjects: BTreeMap<&'static str, usize>,
}

fn train(a: TrainArgs) -> Result<()> {
    let ratios: SplitRatios = a.splits.parse()?;
    let mut dataset = load(&a.data)?;
    // OOD recordings keep their tags; only in-domain ones are re-split
    let in_domain = Dataset::new(
        dataset
            .recordings
            .iter()
            .filter(|r| matches!(r.domain_tag, DomainTag::IdTrain | DomainTag::IdVal | DomainTag::IdTest))
            .cloned()
            .collect(),
    );
    let assignment = synth::split_manifest(&in_domain, ratios, a.seed)?;
    synth::apply_split(&mut dataset, &assignment);
    data::save_manifest(&dataset.manifest(), &a.data)?;

    let model = confnet::init_model(&ConfNetConfig {
        seed: a.seed,
        ..ConfNetConfig::default()
    })?;
    let config = TrainConfig {
        learning_rate: a.lr,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = confnet::train(&model, &dataset, &config)?;
    write(&a.model_out, &confnet::encode_model(&outcome.params))?;
    let history = history_path(&a.model_out);
    write(&history, &confnet::history_csv(&outcome.history)?)?;

    let mut split_subjects = BTreeMap::new();
    for tag in [DomainTag::IdTrain, DomainTag::IdVal, DomainTag::IdTest] {
        let subjects: std::collections::BTreeSet<_> =
            dataset.split(tag).iter().map(|r| r.subject_id.as_str()).collect();
        split_subjects.insert(tag.name(), subjects.len());
    }
    let summary = TrainSummary {
        model: &a.model_out,
        history: &history,
        param_count: confnet::count_params(&outcome.params),
        epochs_run: outcome.history.len() - 1,
        best_epoch: outcome.best_epoch,
        initial_val_mae: outcome.history[0].val_mae,
        best_val_mae: outcome.history[outcome.best_epoch].val_mae,
        split_subjects,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let params = confnet::load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let series = dataset
        .recordings
        .iter()
        .map(|rec| confnet::predict_tcp(&params, rec))
        .collect::<sleepconf::Result<Vec<_>>>()?;
    write(&a.out, &scores_csv(&series)?)
}

#[derive(Serialize)]
struct EvalRow {
    split: String,
    measure: String,
    /// Null when the split has only agreeing or only discordant epochs.
    auroc: Option<f64>,
    aupr: Option<f64>,
    n_pos: usize,
    n_neg: usize,
}

fn eval(a: EvalArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let table = load_scores(&a.scores)?;
    let mut rows = Vec::new();
    for (split, recs) in evaluation_splits(&dataset) {
        for (source, by_rec) in &table {
            let (mut scores, mut labels, mut pred) = (Vec::new(), Vec::new(), Vec::new());
            for rec in &recs {
                let (Some(series), Some(l)) = (by_rec.get(&rec.recording_id), rec.labels.as_ref()) else {
                    continue;
                };
                check_length(rec, series)?;
                scores.extend_from_slice(&series.scores);
                labels.extend_from_slice(l);
                pred.extend(predicted_hypnogram(rec));
            }
            if scores.is_empty() {
                continue;
            }
            let row = match discordance_roc_pr(&scores, &labels, &pred) {
                Ok(r) => EvalRow {
                    split: split.clone(),
                    measure: source.name().to_string(),
                    auroc: Some(r.auroc),
                    aupr: Some(r.aupr),
                    n_pos: r.n_pos,
                    n_neg: r.n_neg,
                },
                Err(Error::Degenerate(_)) => {
                    let scored: Vec<bool> = labels
                        .iter()
                        .zip(&pred)
                        .filter(|(l, _)| l.is_scored())
                        .map(|(l, p)| l != p)
                        .collect();
                    let n_pos = scored.iter().filter(|&&d| d).count();
                    EvalRow {
                        split: split.clone(),
                        measure: source.name().to_string(),
                        auroc: None,
                        aupr: None,
                        n_pos,
                        n_neg: scored.len() - n_pos,
                    }
                }
                Err(e) => return Err(e.into()),
            };
            rows.push(row);
        }
    }
    write(&a.out, &json_bytes(&rows)?)
}

#[derive(Deserialize)]
struct PredictionRow {
    recording_id: String,
    epoch_index: usize,
    predicted: String,
}

fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<StageLabel>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: BTreeMap<String, Vec<StageLabel>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<PredictionRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        let stage: StageLabel = row
            .predicted
            .parse()
            .with_context(|| format!("{} row {}", path.display(), i + 2))?;
        let seq = out.entry(row.recording_id.clone()).or_default();
        if row.epoch_index != seq.len() {
            bail!(Error::Format {
                file: path.display().to_string(),
                reason: format!("row {}: {} epoch {} out of order", i + 2, row.recording_id, row.epoch_index),
            });
        }
        seq.push(stage);
    }
    Ok(out)
}

#[derive(Serialize)]
struct MetricsRow {
    split: String,
    epochwise: MetricReport,
    n_subjects: usize,
    subjectwise_mean: MetricSummary,
    subjectwise_median: MetricSummary,
}

fn add_into(total: &mut [[u64; 5]; 5], part: [[u64; 5]; 5]) {
    for (row, add) in total.iter_mut().zip(part) {
        row.iter_mut().zip(add).for_each(|(a, b)| *a += b);
    }
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let predictions = a.predictions.as_deref().map(read_predictions).transpose()?;
    let mut rows = Vec::new();
    for tag in dataset.tags() {
        let mut pooled = [[0u64; 5]; 5];
        let mut by_subject: BTreeMap<&str, [[u64; 5]; 5]> = BTreeMap::new();
        for rec in dataset.split(tag) {
            let Some(labels) = rec.labels.as_ref() else { continue };
            let pred = match &predictions {
                Some(p) => p
                    .get(&rec.recording_id)
                    .cloned()
                    .ok_or_else(|| Error::Insufficient(format!("no predictions for {}", rec.recording_id)))?,
                None => predicted_hypnogram(rec),
            };
            let cm = confusion_matrix(labels, &pred).with_context(|| rec.recording_id.clone())?;
            add_into(&mut pooled, cm);
            add_into(by_subject.entry(rec.subject_id.as_str()).or_default(), cm);
        }
        if pooled.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        let per_subject: Vec<MetricSummary> = by_subject
            .into_values()
            .filter(|cm| cm.iter().flatten().sum::<u64>() > 0)
            .map(|cm| MetricReport::from_confusion(cm).map(|r| r.summary()))
            .collect::<sleepconf::Result<_>>()?;
        let SubjectAggregate { n_subjects, mean, median } = subject_aggregate(&per_subject)?;
        rows.push(MetricsRow {
            split: tag.name().to_string(),
            epochwise: MetricReport::from_confusion(pooled)?,
            n_subjects,
            subjectwise_mean: mean,
            subjectwise_median: median,
        });
    }
    write(&a.out, &json_bytes(&rows)?)
}

#[derive(Serialize)]
struct BootstrapRow {
    hypothesis: &'static str,
    group: &'static str,
    metric: &'static str,
    n: usize,
    median: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    reps: usize,
    seed: u64,
    rejected: Option<bool>,
    split: String,
    redraws: usize,
    note: String,
}

fn bootstrap(a: BootstrapArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let table = load_scores(&a.scores)?;
    let tcp = tcp_series(&table)?;
    let metric = match a.metric {
        MetricArg::Acc => SubjectMetric::Acc,
        MetricArg::F1w => SubjectMetric::F1w,
        MetricArg::Kappa => SubjectMetric::Kappa,
    };
    let groups: Vec<Group> = match a.group_by {
        GroupBy::All => vec![Group::All],
        GroupBy::Diagnosis => std::iter::once(Group::All)
            .chain(Diagnosis::ALL.into_iter().map(Group::Diagnosis))
            .collect(),
    };
    let (hypothesis, metric_name) = match a.hypothesis {
        HypothesisArg::H01 => ("H01", ""),
        HypothesisArg::H02 => ("H02", metric.name()),
    };
    let eligible = |s: &[SubjectSummary], g: Group| {
        s.iter()
            .filter(|x| g.contains(x) && (matches!(a.hypothesis, HypothesisArg::H02) || x.d.is_some()))
            .count()
    };

    let mut rows = Vec::new();
    for (split, recs) in evaluation_splits(&dataset) {
        let labelled: Vec<&Recording> = recs.into_iter().filter(|r| r.labels.is_some()).collect();
        let summaries = summarize_subjects(&labelled, tcp)?;
        for &group in &groups {
            let result = match a.hypothesis {
                HypothesisArg::H01 => bootstrap_mean_diff(&summaries, group, a.reps, a.seed),
                HypothesisArg::H02 => {
                    bootstrap_correlation(&summaries, group, metric, Correlation::Pearson, a.reps, a.seed)
                }
            };
            let mut row = BootstrapRow {
                hypothesis,
                group: group.name(),
                metric: metric_name,
                n: eligible(&summaries, group),
                median: None,
                ci_low: None,
                ci_high: None,
                reps: a.reps,
                seed: a.seed,
                rejected: None,
                split: split.clone(),
                redraws: 0,
                note: String::new(),
            };
            match result {
                Ok(r) => {
                    row.n = r.n_subjects;
                    row.median = Some(r.median);
                    row.ci_low = Some(r.ci_low);
                    row.ci_high = Some(r.ci_high);
                    row.reps = r.reps;
                    row.rejected = Some(r.rejected);
                    row.redraws = r.redraws;
                }
                Err(Error::Insufficient(_)) => row.note = "insufficient subjects".into(),
                Err(Error::Degenerate(msg)) => row.note = format!("degenerate: {msg}"),
                Err(e) => return Err(e.into()),
            }
            rows.push(row);
        }
    }
    write(&a.out, &csv_bytes(&rows)?)
}

#[derive(Serialize)]
struct BenchmarkReport {
    split: String,
    grid_step: f64,
    n_epochs: usize,
    baseline: MetricSummary,
    detection_area: f64,
    benchmarks: Vec<BenchmarkRow>,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let levels = a
        .benchmarks
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| Error::InvalidConfig(format!("--benchmarks {:?}: {e}", a.benchmarks)))?;
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        bail!(Error::InvalidConfig(format!("benchmark levels {levels:?} must be fractions in [0, 1]")));
    }
    let dataset = load(&a.data)?;
    let table = load_scores(&a.scores)?;
    let tcp = tcp_series(&table)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (split, recs) in evaluation_splits(&dataset) {
        let labelled: Vec<&Recording> = recs.into_iter().filter(|r| r.labels.is_some()).collect();
        if labelled.is_empty() {
            continue;
        }
        let pool = ReviewPool::from_recordings(&labelled, tcp)?;
        if pool.is_empty() {
            continue;
        }
        let curve = sweep(&pool, a.grid_step)?;
        let table = effort_to_benchmark(&curve, &levels)?;
        let base = curve.baseline();
        let report = BenchmarkReport {
            split: split.clone(),
            grid_step: a.grid_step,
            n_epochs: pool.len(),
            baseline: MetricSummary {
                acc: base.acc,
                f1w: base.f1w,
                kappa: base.kappa,
            },
            detection_area: curve.detection_area(),
            benchmarks: table.rows,
        };
        write(&a.out.join(format!("curve_{split}.csv")), &curve.to_csv()?)?;
        write(&a.out.join(format!("benchmarks_{split}.json")), &json_bytes(&report)?)?;
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let rec = dataset
        .get(&a.recording)
        .ok_or_else(|| Error::InvalidConfig(format!("recording {:?} not in dataset", a.recording)))?;
    let table = load_scores(&a.scores)?;
    let series = tcp_series(&table)?
        .get(&rec.recording_id)
        .ok_or_else(|| Error::Insufficient(format!("no TCP scores for recording {}", rec.recording_id)))?;
    check_length(rec, series)?;
    if a.with_reference && rec.labels.is_none() {
        bail!(Error::Insufficient(format!("{} has no reference labels", rec.recording_id)));
    }
    let mut spec = RenderSpec::new(&rec.recording_id, predicted_hypnogram(rec), series.raw_values.clone());
    spec.reference = rec.labels.clone();
    spec.show_reference = a.with_reference;
    write(&a.out, &render_confidence_hypnogram(&spec)?)
}
