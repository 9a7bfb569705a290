//! flowguard: generate, extract, tune, train, classify, evaluate.
//!
//! File-based pipeline: every stage reads and writes plain CSV/JSON so
//! stages can be rerun and compared independently. stdout carries one
//! machine-readable JSON summary line per invocation; diagnostics go to
//! stderr (`FLOWGUARD_LOG` controls verbosity).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod config;
mod results;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use flowguard::clustering::{dbscan, hdbscan, k_distance};
use flowguard::detector::{DetectionModel, DetectorError, ModelMeta};
use flowguard::evaluation::{evaluate, EvalOptions, LabelSpec};
use flowguard::flowmetrics::{
    canonical_rows, features_of_segment, read_feature_csv, write_feature_csv, FlowTable,
    SegmentMode, SegmenterConfig,
};
use flowguard::preprocess::ScalerParams;
use flowguard::synthgen::{generate, Scenario, ScenarioConfig};
use flowguard::tuning::{grid_search, Algo, GridSpec, ScoreKind};
use flowguard::PcapReader;

use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "flowguard",
    about = "Flow-based anomaly detection for SCADA-style TCP traffic; payload-blind, so encrypted links work too",
    version
)]
struct Cli {
    /// Optional key=value config file; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic capture.
    Gen(GenArgs),
    /// Extract per-segment feature vectors from a pcap.
    Extract(ExtractArgs),
    /// Export the k-distance curve of a feature file.
    Kdist(KdistArgs),
    /// Grid-search clustering hyperparameters.
    Tune(TuneArgs),
    /// Cluster benign features and build a detection model.
    Train(TrainArgs),
    /// Classify feature vectors against a model.
    Classify(ClassifyArgs),
    /// Score classification results against ground-truth labels.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scenario id: AN1..AN6, AN7.1..AN7.7.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Capture length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Number of polled RTUs.
    #[arg(long)]
    rtus: Option<usize>,
    #[arg(long)]
    poll_interval: Option<f64>,
    /// Relative poll-timing noise in [0, 1).
    #[arg(long)]
    jitter: Option<f64>,
    /// Model TLS framing (handshake prologue + record overhead).
    #[arg(long)]
    tls: bool,
    /// Redraw payload bytes only; headers and timing stay fixed.
    #[arg(long)]
    payload_seed: Option<u64>,
    #[arg(long)]
    out_pcap: Option<PathBuf>,
    #[arg(long)]
    out_labels: Option<PathBuf>,
    /// Optional JSON generation summary file.
    #[arg(long)]
    out_summary: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    pcap: Option<PathBuf>,
    /// slotted | windowed
    #[arg(long)]
    mode: Option<String>,
    /// Slot / window length in seconds.
    #[arg(long)]
    timespan: Option<f64>,
    #[arg(long)]
    idle_timeout: Option<f64>,
    /// Windowed mode: emit every N-th packet per flow.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KdistArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// dbscan | hdbscan
    #[arg(long)]
    algo: Option<String>,
    /// silhouette | dbcv
    #[arg(long)]
    score: Option<String>,
    /// JSON grid file: {"eps_values": [...], "min_samples_values": [...],
    /// "min_cluster_sizes": [...], "max_parallel": N}.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV copy of the per-candidate rows.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// dbscan | hdbscan
    #[arg(long)]
    algo: Option<String>,
    /// DBSCAN radius (required for dbscan).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_samples: Option<usize>,
    /// HDBSCAN cluster-size floor (required for hdbscan).
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Annotation only: the timespan the features were extracted with.
    #[arg(long)]
    timespan: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Count effect-labeled segments as positives instead of ignoring.
    #[arg(long)]
    effect_as_positive: bool,
}

/// Candidate lists for `tune --grid`; algorithm and score come from the
/// command line.
#[derive(serde::Deserialize)]
struct GridFile {
    #[serde(default)]
    eps_values: Vec<f64>,
    #[serde(default)]
    min_cluster_sizes: Vec<usize>,
    min_samples_values: Vec<usize>,
    #[serde(default = "one")]
    max_parallel: usize,
}

fn one() -> usize {
    1
}

/// Usage errors exit 1, data errors exit 2.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }
    fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FLOWGUARD_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run 'flowguard --help' for usage");
            1
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let overlay = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Gen(args) => cmd_gen(args, &overlay),
        Command::Extract(args) => cmd_extract(args, &overlay),
        Command::Kdist(args) => cmd_kdist(args, &overlay),
        Command::Tune(args) => cmd_tune(args, &overlay),
        Command::Train(args) => cmd_train(args, &overlay),
        Command::Classify(args) => cmd_classify(args, &overlay),
        Command::Evaluate(args) => cmd_evaluate(args, &overlay),
    }
}

fn summary_line(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_gen(args: GenArgs, overlay: &ConfigFile) -> Result<(), CliError> {
    let scenario: Scenario = args
        .scenario
        .or(overlay.get_string("scenario"))
        .ok_or_else(|| CliError::usage("--scenario is required"))?
        .parse()
        .map_err(CliError::usage)?;
    let seed = resolve(args.seed, overlay, "seed")?.unwrap_or(0);
    let mut cfg = ScenarioConfig::new(scenario, seed);
    if let Some(d) = resolve(args.duration, overlay, "duration")? {
        cfg.duration_s = d;
    }
    if let Some(n) = resolve(args.rtus, overlay, "rtus")? {
        cfg.n_rtus = n;
    }
    if let Some(p) = resolve(args.poll_interval, overlay, "poll-interval")? {
        cfg.poll_interval_s = p;
    }
    if let Some(j) = resolve(args.jitter, overlay, "jitter")? {
        cfg.jitter_frac = j;
    }
    cfg.tls = args.tls || overlay.get_bool("tls")?;
    cfg.payload_seed = resolve(args.payload_seed, overlay, "payload-seed")?;
    let out_pcap = require_path(args.out_pcap, overlay, "out-pcap")?;
    let out_labels = require_path(args.out_labels, overlay, "out-labels")?;

    let summary = generate(&cfg, &out_pcap, &out_labels)
        .map_err(|e| CliError::data(e.to_string()))?;
    if let Some(path) = args.out_summary {
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )
        .map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
    }
    log::info!(
        "generated {} packets / {} flows for {scenario}",
        summary.packet_count,
        summary.flow_count
    );
    summary_line(serde_json::json!({
        "command": "gen",
        "scenario": scenario.id(),
        "packet_count": summary.packet_count,
        "flow_count": summary.flow_count,
        "out_pcap": out_pcap,
        "out_labels": out_labels,
    }));
    Ok(())
}

fn cmd_extract(args: ExtractArgs, overlay: &ConfigFile) -> Result<(), CliError> {
    let pcap = require_path(args.pcap, overlay, "pcap")?;
    let mode: SegmentMode = args
        .mode
        .or(overlay.get_string("mode"))
        .unwrap_or_else(|| "slotted".into())
        .parse()
        .map_err(CliError::usage)?;
    let timespan = resolve(args.timespan, overlay, "timespan")?
        .ok_or_else(|| CliError::usage("--timespan is required"))?;
    let idle = resolve(args.idle_timeout, overlay, "idle-timeout")?
        .unwrap_or_else(|| 120.0_f64.max(timespan));
    let stride = resolve(args.stride, overlay, "stride")?.unwrap_or(1);
    let out = require_path(args.out, overlay, "out")?;
    let cfg = SegmenterConfig::with_options(mode, timespan, idle, stride)
        .map_err(|e| CliError::usage(e.to_string()))?;

    let reader = PcapReader::open(&pcap)
        .map_err(|e| CliError::data(format!("{}: {e}", pcap.display())))?;
    let mut table = FlowTable::new(cfg);
    let mut vectors = Vec::new();
    let mut reader = reader;
    for record in reader.by_ref() {
        let record = record.map_err(|e| CliError::data(e.to_string()))?;
        for segment in table.ingest(record) {
            vectors.push(features_of_segment(&segment).expect("segments are non-empty"));
        }
    }
    for segment in table.flush() {
        vectors.push(features_of_segment(&segment).expect("segments are non-empty"));
    }
    let stats = reader.stats();
    write_feature_csv(&out, &vectors)
        .map_err(|e| CliError::data(format!("writing {}: {e}", out.display())))?;
    log::info!(
        "decoded {} packets ({} skipped), emitted {} segments",
        stats.decoded,
        stats.skipped(),
        vectors.len()
    );
    summary_line(serde_json::json!({
        "command": "extract",
        "packets_decoded": stats.decoded,
        "packets_skipped": stats.skipped(),
        "segments": vectors.len(),
        "out": out,
    }));
    Ok(())
}

fn cmd_kdist(args: KdistArgs, overlay: &ConfigFile) -> Result<(), CliError> {
    let features = require_path(args.features, overlay, "features")?;
    let k = resolve(args.k, overlay, "k")?.ok_or_else(|| CliError::usage("--k is required"))?;
    if k == 0 {
        return Err(CliError::usage("--k must be >= 1"));
    }
    let out = require_path(args.out, overlay, "out")?;
    let (scaled, _) = load_scaled(&features)?;
    let curve = k_distance(&scaled, k).map_err(|e| CliError::data(e.to_string()))?;
    curve
        .write_csv(&out)
        .map_err(|e| CliError::data(format!("writing {}: {e}", out.display())))?;
    summary_line(serde_json::json!({
        "command": "kdist",
        "k": k,
        "points": curve.distances.len(),
        "out": out,
    }));
    Ok(())
}

fn cmd_tune(args: TuneArgs, overlay: &ConfigFile) -> Result<(), CliError> {
    let features = require_path(args.features, overlay, "features")?;
    let algo: Algo = args
        .algo
        .or(overlay.get_string("algo"))
        .ok_or_else(|| CliError::usage("--algo is required"))?
        .parse()
        .map_err(CliError::usage)?;
    let score: ScoreKind = args
        .score
        .or(overlay.get_string("score"))
        .unwrap_or_else(|| "silhouette".into())
        .parse()
        .map_err(CliError::usage)?;
    let grid_path = require_path(args.grid, overlay, "grid")?;
    let out = require_path(args.out, overlay, "out")?;

    let grid_text = std::fs::read_to_string(&grid_path)
        .map_err(|e| CliError::data(format!("{}: {e}", grid_path.display())))?;
    // Route through Value so numbers parse exactly.
    let grid_value: serde_json::Value = serde_json::from_str(&grid_text)
        .map_err(|e| CliError::data(format!("{}: {e}", grid_path.display())))?;
    let grid: GridFile = serde_json::from_value(grid_value).map_err(|e| {
        CliError::data(format!("{}: bad grid: {e}", grid_path.display()))
    })?;
    let spec = GridSpec {
        algo,
        eps_values: grid.eps_values,
        min_cluster_sizes: grid.min_cluster_sizes,
        min_samples_values: grid.min_samples_values,
        score,
        max_parallel: grid.max_parallel,
    };

    let (scaled, _) = load_scaled(&features)?;
    let report = grid_search(&scaled, &spec).map_err(|e| CliError::data(e.to_string()))?;
    report
        .write_json(&out)
        .map_err(|e| CliError::data(format!("writing {}: {e}", out.display())))?;
    if let Some(csv) = &args.out_csv {
        report
            .write_csv(csv)
            .map_err(|e| CliError::data(format!("writing {}: {e}", csv.display())))?;
    }
    summary_line(serde_json::json!({
        "command": "tune",
        "candidates": report.rows.len(),
        "best": report.best.params,
        "best_score": report.best.score,
        "out": out,
    }));
    Ok(())
}

fn cmd_train(args: TrainArgs, overlay: &ConfigFile) -> Result<(), CliError> {
    let features = require_path(args.features, overlay, "features")?;
    let algo: Algo = args
        .algo
        .or(overlay.get_string("algo"))
        .ok_or_else(|| CliError::usage("--algo is required"))?
        .parse()
        .map_err(CliError::usage)?;
    let min_samples = resolve(args.min_samples, overlay, "min-samples")?.unwrap_or(4);
    let eps = resolve(args.eps, overlay, "eps")?;
    let min_cluster_size = resolve(args.min_cluster_size, overlay, "min-cluster-size")?;
    let out = require_path(args.out, overlay, "out")?;

    let file = read_feature_csv(&features)
        .map_err(|e| CliError::data(format!("{}: {e}", features.display())))?;
    let rows = canonical_rows(&file).map_err(|e| CliError::data(e.to_string()))?;
    let scaler = ScalerParams::fit(&rows).map_err(|e| CliError::data(e.to_string()))?;
    let scaled = scaler
        .transform_matrix(&rows)
        .map_err(|e| CliError::data(e.to_string()))?;

    let mut params = std::collections::BTreeMap::new();
    params.insert("min_samples".to_string(), min_samples as f64);
    let assignment = match algo {
        Algo::Dbscan => {
            let eps =
                eps.ok_or_else(|| CliError::usage("--eps is required for --algo dbscan"))?;
            if !eps.is_finite() || eps <= 0.0 {
                return Err(CliError::usage(format!("--eps must be > 0, got {eps}")));
            }
            params.insert("eps".to_string(), eps);
            dbscan(&scaled, eps, min_samples).map_err(|e| CliError::data(e.to_string()))?
        }
        Algo::Hdbscan => {
            let mcs = min_cluster_size.ok_or_else(|| {
                CliError::usage("--min-cluster-size is required for --algo hdbscan")
            })?;
            params.insert("min_cluster_size".to_string(), mcs as f64);
            hdbscan(&scaled, mcs, min_samples).map_err(|e| CliError::data(e.to_string()))?
        }
    };
    let meta = ModelMeta {
        algo: algo.to_string(),
        params,
        timespan_s: resolve(args.timespan, overlay, "timespan")?,
        created: String::new(),
    };
    let model = DetectionModel::build(&scaled, &assignment, scaler, meta)
        .map_err(|e| CliError::data(e.to_string()))?;
    model
        .save(&out)
        .map_err(|e| CliError::data(format!("writing {}: {e}", out.display())))?;
    summary_line(serde_json::json!({
        "command": "train",
        "algo": algo.to_string(),
        "train_points": model.train_len(),
        "clusters": model.mpdi().len(),
        "noise_dropped": assignment.n_noise,
        "out": out,
    }));
    Ok(())
}

fn cmd_classify(args: ClassifyArgs, overlay: &ConfigFile) -> Result<(), CliError> {
    let model_path = require_path(args.model, overlay, "model")?;
    let features = require_path(args.features, overlay, "features")?;
    let out = require_path(args.out, overlay, "out")?;
    let model = DetectionModel::load(&model_path)
        .map_err(|e| CliError::data(format!("{}: {e}", model_path.display())))?;
    let file = read_feature_csv(&features)
        .map_err(|e| CliError::data(format!("{}: {e}", features.display())))?;
    let meta = file.meta.as_ref().ok_or_else(|| {
        CliError::data(format!(
            "{}: missing meta columns; classify needs them to key results",
            features.display()
        ))
    })?;
    let results = model
        .classify_batch(&file.rows)
        .map_err(|e| match e {
            e @ (DetectorError::DimensionMismatch { .. }
            | DetectorError::BatchDimensionMismatch { .. }) => CliError::data(e.to_string()),
            other => CliError::data(other.to_string()),
        })?;
    results::write_results_csv(&out, meta, &results)
        .map_err(|e| CliError::data(format!("writing {}: {e}", out.display())))?;
    let anomalies = results
        .iter()
        .filter(|r| r.verdict == flowguard::Verdict::Anomaly)
        .count();
    summary_line(serde_json::json!({
        "command": "classify",
        "segments": results.len(),
        "anomalies": anomalies,
        "out": out,
    }));
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, overlay: &ConfigFile) -> Result<(), CliError> {
    let results_path = require_path(args.results, overlay, "results")?;
    let labels_path = require_path(args.labels, overlay, "labels")?;
    let out = require_path(args.out, overlay, "out")?;
    let effect_as_positive = args.effect_as_positive || overlay.get_bool("effect-as-positive")?;

    let rows = results::read_results_csv(&results_path)
        .map_err(|e| CliError::data(format!("{}: {e}", results_path.display())))?;
    let spec = LabelSpec::from_csv(&labels_path)
        .map_err(|e| CliError::data(format!("{}: {e}", labels_path.display())))?;
    let labels: Vec<_> = rows
        .iter()
        .map(|row| {
            let (label, scenario) = spec.label_of(&row.meta);
            (label, scenario.map(String::from))
        })
        .collect();
    let verdicts: Vec<_> = rows.iter().map(|r| r.verdict).collect();
    let report = evaluate(
        &verdicts,
        &labels,
        EvalOptions { effect_as_positive },
    )
    .map_err(|e| CliError::data(e.to_string()))?;
    report
        .write_json(&out)
        .map_err(|e| CliError::data(format!("writing {}: {e}", out.display())))?;
    eprint!("{}", report.render_table());
    summary_line(serde_json::json!({
        "command": "evaluate",
        "f1": report.overall.f1,
        "precision": report.overall.precision,
        "recall": report.overall.recall,
        "ignored": report.ignored_count,
        "out": out,
    }));
    Ok(())
}

/// Flag value, else config value, else None. Config parse failures are
/// usage errors.
fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    overlay: &ConfigFile,
    key: &str,
) -> Result<Option<T>, CliError> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => overlay.get_parsed(key),
    }
}

fn require_path(
    flag: Option<PathBuf>,
    overlay: &ConfigFile,
    key: &str,
) -> Result<PathBuf, CliError> {
    flag.or_else(|| overlay.get_string(key).map(PathBuf::from))
        .ok_or_else(|| CliError::usage(format!("--{key} is required")))
}

/// Read a feature CSV and robust-scale it with its own fit.
fn load_scaled(path: &PathBuf) -> Result<(Vec<Vec<f64>>, ScalerParams), CliError> {
    let file = read_feature_csv(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let rows = canonical_rows(&file).map_err(|e| CliError::data(e.to_string()))?;
    let scaler = ScalerParams::fit(&rows).map_err(|e| CliError::data(e.to_string()))?;
    let scaled = scaler
        .transform_matrix(&rows)
        .map_err(|e| CliError::data(e.to_string()))?;
    Ok((scaled, scaler))
}
