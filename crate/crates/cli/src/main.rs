use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "sleepconf", version, about = "Uncertainty scores and confidence-guided review for automatic sleep scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort (all recordings tagged ID_TEST)
    Gen(GenArgs),
    /// Compute softmax-based uncertainty measures
    Measures(MeasuresArgs),
    /// Compute the true-class probability from the reference labels
    Tcp(TcpArgs),
    /// Split by subject and fit the confidence network
    Train(TrainArgs),
    /// Predict TCP with a trained confidence network
    Predict(PredictArgs),
    /// Discordance-detection ROC/PR of score series per evaluation split
    Eval(EvalArgs),
    /// Epoch- and subject-wise agreement metrics per split
    Metrics(MetricsArgs),
    /// Subject-level percentile bootstrap for H01 (mean TCP gap) or H02 (correlation)
    Bootstrap(BootstrapArgs),
    /// Threshold-driven review simulation
    Simulate(SimulateArgs),
    /// Render one predicted hypnogram over its TCP background as SVG
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output dataset directory [required]
    #[arg(long)]
    out: PathBuf,
    /// Number of recordings, one subject each
    #[arg(long, default_value_t = 50)]
    recordings: usize,
    /// Epochs per recording
    #[arg(long, default_value_t = 960)]
    epochs: usize,
    /// Channel pairs per recording
    #[arg(long, default_value_t = 2)]
    pairs: usize,
    /// Target cohort misclassification rate
    #[arg(long, default_value_t = 0.18)]
    error_rate: f64,
    /// Hypnogram self-transition probability
    #[arg(long, default_value_t = 0.85)]
    stay_prob: f64,
    /// Fraction of reference labels replaced by Unknown
    #[arg(long, default_value_t = 0.01)]
    unknown_rate: f64,
    /// Seed for every random stream [required]
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Debug)]
struct MeasuresArgs {
    /// Dataset directory [required]
    #[arg(long)]
    data: PathBuf,
    /// Measure name (ENTROPY_AVG, RATIO_AVG, STD_AVG, MAX_MAJORITY, STD_MAJORITY, PCT_MU, PCT_SIGMA) or "all"
    #[arg(long, default_value = "all")]
    measure: String,
    /// Output scores CSV [required]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TcpArgs {
    /// Dataset directory [required]
    #[arg(long)]
    data: PathBuf,
    /// Output scores CSV (source TCP_TARGET) [required]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory; its manifest is rewritten with the new split tags [required]
    #[arg(long)]
    data: PathBuf,
    /// Subject-level train,val,test fractions over the in-domain recordings
    #[arg(long, default_value = "0.7,0.15,0.15")]
    splits: String,
    /// Model file; the history CSV is written next to it [required]
    #[arg(long)]
    model_out: PathBuf,
    /// Seed for every random stream [required]
    #[arg(long)]
    seed: u64,
    /// Upper bound on training epochs
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Dataset directory [required]
    #[arg(long)]
    data: PathBuf,
    /// Model file written by train [required]
    #[arg(long)]
    model: PathBuf,
    /// Output scores CSV (source TCP) [required]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset directory [required]
    #[arg(long)]
    data: PathBuf,
    /// Scores CSV; every source in it is evaluated [required]
    #[arg(long)]
    scores: PathBuf,
    /// Output JSON report [required]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Dataset directory [required]
    #[arg(long)]
    data: PathBuf,
    /// CSV with columns recording_id, epoch_index, predicted [default: argmax of the pair-averaged softmax]
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Output JSON report [required]
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum HypothesisArg {
    H01,
    H02,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MetricArg {
    Acc,
    F1w,
    Kappa,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum GroupBy {
    /// One group with every subject
    All,
    /// ALL plus one group per diagnosis
    Diagnosis,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    /// Dataset directory [required]
    #[arg(long)]
    data: PathBuf,
    /// Scores CSV holding TCP (or TCP_TARGET) series [required]
    #[arg(long)]
    scores: PathBuf,
    /// h01: mean TCP gap between agreeing and discordant epochs; h02: correlation of mean TCP with --metric [required]
    #[arg(long, value_enum)]
    hypothesis: HypothesisArg,
    /// Subject metric correlated with mean TCP (H02 only)
    #[arg(long, value_enum, default_value = "kappa")]
    metric: MetricArg,
    /// Bootstrap resamples per group
    #[arg(long, default_value_t = 5000)]
    reps: usize,
    /// Seed for every random stream [required]
    #[arg(long)]
    seed: u64,
    /// Subject grouping
    #[arg(long, value_enum, default_value = "diagnosis")]
    group_by: GroupBy,
    /// Output CSV [required]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Dataset directory [required]
    #[arg(long)]
    data: PathBuf,
    /// Scores CSV holding TCP (or TCP_TARGET) series [required]
    #[arg(long)]
    scores: PathBuf,
    /// Threshold grid spacing; must divide 1
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Comma-separated metric levels as fractions
    #[arg(long, default_value = "0.8,0.85,0.9,0.95")]
    benchmarks: String,
    /// Output directory for curve_<SPLIT>.csv and benchmarks_<SPLIT>.json [required]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Dataset directory [required]
    #[arg(long)]
    data: PathBuf,
    /// recording_id to draw [required]
    #[arg(long)]
    recording: String,
    /// Scores CSV holding TCP (or TCP_TARGET) series [required]
    #[arg(long)]
    scores: PathBuf,
    /// Output SVG [required]
    #[arg(long)]
    out: PathBuf,
    /// Overlay the reference hypnogram
    #[arg(long)]
    with_reference: bool,
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let message = text
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(|l| l.trim().trim_start_matches("error: "))
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!("{}", error_line("usage", &message));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<sleepconf::Error>())
                .map_or("error", |c| c.kind());
            eprintln!("{}", error_line(kind, &format!("{e:#}")));
            ExitCode::from(1)
        }
    }
}
