//! Command-line front door: runs evaluations, consensus aggregation,
//! statistics, and alpha sweeps; emits JSON, CSV, or Markdown reports.
//!
//! Every command is a pure function of its inputs, flags, and `--seed`:
//! repeated invocations produce byte-identical artifacts, and every result
//! equals the corresponding library call.

pub mod render;

use std::collections::HashSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fairdet_core::consensus::{
    aggregate_with, disparity_labels, group_rate, histogram_rows, load_votes, vote_histogram,
    ConsensusConfig,
};
use fairdet_core::dataset::{
    apply_min_area_filter, load_detections, load_ground_truth, slice, Dataset, Detection, SliceSpec,
};
use fairdet_core::error::{Error, Result};
use fairdet_core::eval::{evaluate, group_gap_report, CrossGroupMode, EvalConfig, GroupEvalConfig};
use fairdet_core::loss::{
    alpha_sweep, generate_synthetic, train, LossConfig, SweepConfig, SyntheticConfig, TrainOptions,
    WeightScheme, WeightVector,
};
use fairdet_core::stats::{confidence_width, gap_resolvable, min_samples, ConfidenceSpec};

#[derive(Debug, Parser)]
#[command(
    name = "fairdet",
    version,
    about = "Detection-fairness auditing: per-group AP, consensus labels, confidence bounds, and loss-reweighting sweeps"
)]
pub struct Cli {
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Md,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate detections against ground truth (COCO-style AP).
    Eval(EvalArgs),
    /// Per-group evaluation with gaps and the predictive-inequity metric.
    GroupEval(GroupEvalArgs),
    /// Aggregate annotator votes into consensus labels.
    Consensus(ConsensusArgs),
    /// Holdout confidence width, gap resolvability, and sample-size solving.
    Stats(StatsArgs),
    /// Train the synthetic detection head at several DS loss weights.
    Sweep(SweepArgs),
    /// Per-iteration held-out loss and AP50 curves for one training run.
    TrainCurves(TrainCurvesArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth JSON file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Detection JSON file.
    #[arg(long)]
    pub det: PathBuf,
    /// Minimum person box area in square pixels; smaller people are ignored.
    #[arg(long, default_value_t = 10_000.0)]
    pub min_area: f64,
    /// IoU threshold; repeat to override the default 0.50..0.95 set.
    #[arg(long = "iou")]
    pub iou: Vec<f64>,
    /// Dataset slice, e.g. time_of_day=day or occluded=exclude; repeatable.
    #[arg(long = "slice")]
    pub slices: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GroupEvalArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// How detections on the other group's people are treated.
    #[arg(long, value_enum, default_value_t = CrossGroup::Ignore)]
    pub cross_group: CrossGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CrossGroup {
    Ignore,
    FalsePositive,
}

#[derive(Debug, Args)]
pub struct ConsensusArgs {
    /// Votes JSON file.
    #[arg(long)]
    pub votes: PathBuf,
    /// Votes per record; other counts use a strict majority rule.
    #[arg(long, default_value_t = 3)]
    pub votes_per_record: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(subcommand)]
    pub which: StatsCommand,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Confidence half-width sqrt(ln(k/delta)/n).
    Width {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        k: u64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Whether two holdout sizes can resolve a gap (pass --n twice).
    Resolvable {
        #[arg(long = "n", num_args = 1, action = clap::ArgAction::Append)]
        n: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        k: u64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        gap: f64,
    },
    /// Smallest (n_a, n_b) at a given size ratio that resolves a gap.
    MinSamples {
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 1)]
        k: u64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        gap: f64,
    },
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// DS loss weight; repeat for several (default 1, 2, 3, 5, 10).
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    /// Training runs per alpha.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Weighting scheme to train with.
    #[arg(long, value_enum, default_value_t = Scheme::Augmented)]
    pub scheme: Scheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    Augmented,
    GroupNormalized,
}

#[derive(Debug, Args)]
pub struct TrainCurvesArgs {
    /// DS loss weight for the run.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Gradient-descent iterations.
    #[arg(long, default_value_t = 300)]
    pub iterations: usize,
    /// Record the held-out state every this many iterations.
    #[arg(long, default_value_t = 10)]
    pub record_every: usize,
}

/// Maps an error to the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Parse { .. } => 2,
        Error::Io { .. } => 3,
        Error::Numerical(_) => 4,
    }
}

/// Machine-readable error envelope written to standard error.
pub fn error_json(err: &Error) -> String {
    let code = match err {
        Error::Validation(_) | Error::Parse { .. } => "validation",
        Error::Io { .. } => "io",
        Error::Numerical(_) => "numerical",
    };
    let mut message = err.to_string();
    let mut source = std::error::Error::source(err);
    while let Some(cause) = source {
        message.push_str(": ");
        message.push_str(&cause.to_string());
        source = cause.source();
    }
    serde_json::json!({ "error": { "code": code, "message": message } }).to_string()
}

/// Loads, filters, and slices the ground truth, then loads the detections:
/// a detection must reference an image of the original file, and detections
/// on images dropped by a slice are excluded from the evaluation.
fn load_eval_inputs(args: &EvalArgs) -> Result<(Dataset, Vec<Detection>)> {
    let mut dataset = load_ground_truth(&args.gt)?;
    if args.min_area < 0.0 {
        return Err(Error::validation(format!(
            "--min-area must be non-negative, got {}",
            args.min_area
        )));
    }
    let original_images: HashSet<String> = dataset.images.iter().map(|im| im.id.clone()).collect();
    dataset = apply_min_area_filter(&dataset, args.min_area);
    for spec in &args.slices {
        dataset = slice(&dataset, &SliceSpec::parse(spec)?);
    }
    let mut detections = load_detections(&args.det)?;
    for det in &detections {
        if !original_images.contains(&det.image_id) {
            return Err(Error::validation(format!(
                "detection references image {:?} absent from the ground-truth file",
                det.image_id
            )));
        }
    }
    let kept: HashSet<&str> = dataset.images.iter().map(|im| im.id.as_str()).collect();
    detections.retain(|d| kept.contains(d.image_id.as_str()));
    Ok((dataset, detections))
}

fn eval_config(args: &EvalArgs) -> EvalConfig {
    if args.iou.is_empty() {
        EvalConfig::default()
    } else {
        let mut thresholds = args.iou.clone();
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        thresholds.dedup();
        EvalConfig::with_thresholds(thresholds)
    }
}

/// Executes the parsed command and returns the rendered artifact.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Eval(args) => {
            let (dataset, detections) = load_eval_inputs(args)?;
            let report = evaluate(&detections, &dataset, &eval_config(args))?;
            Ok(match cli.format {
                Format::Json => render::to_json(&report)?,
                Format::Csv => render::ap_report_csv(&report),
                Format::Md => render::ap_report_markdown(&report),
            })
        }
        Command::GroupEval(args) => {
            let (dataset, detections) = load_eval_inputs(&args.eval)?;
            let config = GroupEvalConfig {
                eval: eval_config(&args.eval),
                cross_group: match args.cross_group {
                    CrossGroup::Ignore => CrossGroupMode::Ignore,
                    CrossGroup::FalsePositive => CrossGroupMode::FalsePositive,
                },
                ..GroupEvalConfig::default()
            };
            let report = group_gap_report(&detections, &dataset, &config)?;
            Ok(match cli.format {
                Format::Json => render::to_json(&report)?,
                Format::Csv => render::gap_report_csv(&report),
                Format::Md => render::gap_report_markdown(&report),
            })
        }
        Command::Consensus(args) => {
            let records = load_votes(&args.votes)?;
            let config = ConsensusConfig {
                votes_per_record: args.votes_per_record,
            };
            let results = records
                .iter()
                .map(|r| aggregate_with(r, &config))
                .collect::<Result<Vec<_>>>()?;
            let histogram = histogram_rows(&vote_histogram(&records));
            let labels = disparity_labels(&results);
            let ds_rate = if labels.is_empty() {
                None
            } else {
                Some(group_rate(&labels)?)
            };
            Ok(match cli.format {
                Format::Json => {
                    let value = serde_json::json!({
                        "results": results,
                        "histogram": histogram
                            .iter()
                            .map(|(pattern, count)| {
                                serde_json::json!({ "pattern": pattern, "count": count })
                            })
                            .collect::<Vec<_>>(),
                        "disparity_labels": labels,
                        "ds_rate": ds_rate,
                    });
                    render::to_json(&value)?
                }
                Format::Csv => render::histogram_csv(&histogram),
                Format::Md => render::consensus_markdown(&histogram, ds_rate),
            })
        }
        Command::Stats(args) => {
            let rows = match args.which {
                StatsCommand::Width { n, k, delta } => {
                    let width = confidence_width(&ConfidenceSpec::new(n, k, delta)?);
                    vec![("width".to_string(), serde_json::json!(width))]
                }
                StatsCommand::Resolvable {
                    ref n,
                    k,
                    delta,
                    gap,
                } => {
                    let [n_a, n_b]: [u64; 2] = n.as_slice().try_into().map_err(|_| {
                        Error::validation("pass --n exactly twice: the two holdout sizes")
                    })?;
                    let resolvable = gap_resolvable(n_a, n_b, k, delta, gap)?;
                    let width_a = confidence_width(&ConfidenceSpec::new(n_a, k, delta)?);
                    let width_b = confidence_width(&ConfidenceSpec::new(n_b, k, delta)?);
                    // Note whether the queried pair is larger than necessary.
                    let (big, small) = if n_a >= n_b { (n_a, n_b) } else { (n_b, n_a) };
                    let minimal_pair = min_samples(big as f64 / small as f64, k, delta, gap)?;
                    let minimal = resolvable && minimal_pair == (big, small);
                    vec![
                        ("resolvable".to_string(), serde_json::json!(resolvable)),
                        ("width_a".to_string(), serde_json::json!(width_a)),
                        ("width_b".to_string(), serde_json::json!(width_b)),
                        (
                            "width_sum".to_string(),
                            serde_json::json!(width_a + width_b),
                        ),
                        (
                            "minimal_pair".to_string(),
                            serde_json::json!({ "n_a": minimal_pair.0, "n_b": minimal_pair.1 }),
                        ),
                        ("minimal".to_string(), serde_json::json!(minimal)),
                    ]
                }
                StatsCommand::MinSamples {
                    ratio,
                    k,
                    delta,
                    gap,
                } => {
                    let (n_a, n_b) = min_samples(ratio, k, delta, gap)?;
                    let width_sum = confidence_width(&ConfidenceSpec::new(n_a, k, delta)?)
                        + confidence_width(&ConfidenceSpec::new(n_b, k, delta)?);
                    vec![
                        ("n_a".to_string(), serde_json::json!(n_a)),
                        ("n_b".to_string(), serde_json::json!(n_b)),
                        ("width_sum".to_string(), serde_json::json!(width_sum)),
                    ]
                }
            };
            Ok(match cli.format {
                Format::Json => {
                    let mut map = serde_json::Map::new();
                    for (key, value) in rows {
                        map.insert(key, value);
                    }
                    render::to_json(&serde_json::Value::Object(map))?
                }
                Format::Csv => render::key_value_csv(&rows),
                Format::Md => render::key_value_markdown(&rows),
            })
        }
        Command::Sweep(args) => {
            let config = SweepConfig {
                alphas: if args.alphas.is_empty() {
                    SweepConfig::default().alphas
                } else {
                    args.alphas.clone()
                },
                repeats: args.repeats,
                base_seed: cli.seed,
                scheme: match args.scheme {
                    Scheme::Augmented => WeightScheme::Augmented,
                    Scheme::GroupNormalized => WeightScheme::GroupNormalized,
                },
                ..SweepConfig::default()
            };
            let report = alpha_sweep(&config)?;
            Ok(match cli.format {
                Format::Json => render::to_json(&report)?,
                Format::Csv => render::sweep_csv(&report),
                Format::Md => render::sweep_markdown(&report),
            })
        }
        Command::TrainCurves(args) => {
            let synthetic = SyntheticConfig::default();
            let (train_batch, holdout) = generate_synthetic(cli.seed, &synthetic)?;
            let loss_config = LossConfig::for_batch(train_batch.len(), synthetic.num_classes)?;
            let weights = WeightVector::new(1.0, args.alpha, 1.0, 1.0)?;
            let options = TrainOptions {
                iterations: args.iterations,
                record_every: args.record_every,
                record_ap: true,
                seed: cli.seed,
                ..TrainOptions::default()
            };
            let result = train(&train_batch, &holdout, &loss_config, &weights, &options)?;
            Ok(match cli.format {
                Format::Json => render::to_json(&result.trajectory)?,
                Format::Csv => render::curves_csv(&result.trajectory),
                Format::Md => render::curves_markdown(&result.trajectory),
            })
        }
    }
}
