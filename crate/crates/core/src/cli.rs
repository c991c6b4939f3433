//! Command-line pipeline: generate or ingest a dataset, segment it, train
//! attribute weights, run walk-forward evaluations, fit the regression
//! baseline, compare methods, and simulate the labor-cost break-even.
//!
//! Every subcommand writes its artifacts under one output root
//! (`data/`, `models/`, `reports/`) plus a manifest in `manifests/`
//! recording the effective configuration and the SHA-256 digests of all
//! inputs and outputs. All randomness flows from the global `--seed`
//! through named substreams, so a pipeline is reproducible — bit-identical
//! output trees — from the master seed alone, regardless of worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::backtest::{self, TrialConfig, TrialReport};
use crate::domain::{self, Dataset, Segmentation};
use crate::economics::{self, AuctionConfig, SweepGrid};
use crate::knn::SolutionWeighting;
use crate::regression::{self, FeatureSpec};
use crate::stats::{self, ErrorStats, Tail};
use crate::synth::{self, SyntheticSpec};
use crate::training::{self, TrainingConfig};
use crate::Result as CoreResult;

/// Derives a named random substream from the master seed: the FNV-1a
/// 64-bit hash of the name XORed with the seed. Distinct pipeline stages
/// draw from unrelated streams while staying reproducible from one knob.
pub fn substream(master_seed: u64, name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash ^ master_seed
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Manifest timestamp: honors the `SOURCE_DATE_EPOCH` convention so that
/// archival runs produce byte-identical manifests; falls back to now.
fn manifest_timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::<chrono::Utc>::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Provenance record accompanying every subcommand's artifacts: identical
/// manifests imply identical artifacts, since the manifest digests both
/// the effective configuration and every input and output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub timestamp: String,
    /// The effective, fully resolved parameters of the run.
    pub config: serde_json::Value,
    /// SHA-256 of the canonical serialization of the full configuration.
    pub config_digest: String,
    /// Input file path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the out root -> SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

/// Optional JSON config file (`--config`): per-stage overrides applied on
/// top of the built-in defaults and below explicit command-line flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub training: TrainingOverrides,
    pub backtest: BacktestOverrides,
    pub auction: AuctionOverrides,
    pub feature_spec: Option<FeatureSpec>,
}

/// Overrides for the weight-training stage.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingOverrides {
    pub k_range: Option<Vec<usize>>,
    pub random_iterations: Option<usize>,
    pub simplex_max_iterations: Option<usize>,
    pub exact_match_epsilon: Option<f64>,
}

/// Overrides for the walk-forward evaluation stage.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestOverrides {
    pub lag_days: Option<i64>,
    pub exact_match_epsilon: Option<f64>,
}

/// Overrides for the auction simulation stage.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuctionOverrides {
    pub n_bidders: Option<usize>,
    pub target_margin: Option<f64>,
    pub trials: Option<usize>,
    pub common_random_numbers: Option<bool>,
}

/// Analogy-based freight cost estimation pipeline.
#[derive(Debug, Parser)]
#[command(name = "lanecast", version, about = "Freight consignment cost estimation by analogy: dataset tooling, weight training, walk-forward evaluation, regression baseline, and bidding economics")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master seed; every stage derives its own named substream from it.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// JSON config file with per-stage overrides.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,

    /// Output directory root.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    /// Train at full reference scale: 22,500 random iterations and a
    /// 2,500-iteration fine-tune cap (instead of the fast 500/200 preset).
    #[arg(long, global = true)]
    paper_fidelity: bool,

    /// Worker threads (0 = one per core). Outputs are identical either way.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic job dataset.
    Synth {
        /// Dataset recipe JSON; defaults to the built-in five-lane example.
        #[arg(long, value_name = "JSON")]
        spec: Option<PathBuf>,
        /// Number of jobs for the built-in example recipe.
        #[arg(long, conflicts_with = "spec")]
        jobs: Option<usize>,
    },
    /// Validate a jobs CSV, emitting the normalized dataset and rejections.
    Ingest {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
    },
    /// Split a dataset into historical / training / test segments.
    Segment {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        /// Share of the non-test remainder assigned to the historical pool.
        #[arg(long, default_value_t = 0.6)]
        historical_share: f64,
    },
    /// Train attribute weights, one model per k.
    Train {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        #[arg(long, value_name = "JSON")]
        segmentation: PathBuf,
        /// k values to train (comma-separated); default 1..6.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Neighbor weighting in the solution function.
        #[arg(long, value_enum, default_value_t = ModeArg::Proportional)]
        mode: ModeArg,
    },
    /// Walk-forward evaluation: untrained and trained reports per k.
    Backtest {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        #[arg(long, value_name = "JSON")]
        segmentation: PathBuf,
        /// Directory holding model_k{K}.json files; default {out}/models.
        #[arg(long, value_name = "DIR")]
        models: Option<PathBuf>,
        /// k values to evaluate (comma-separated); default 1..6.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Minimum age, in days, a job must have to enter a probe's pool.
        #[arg(long)]
        lag_days: Option<i64>,
        /// Feed each estimated test job back into later pools at its
        /// actual cost (forces sequential evaluation).
        #[arg(long)]
        replay_estimates: bool,
        /// Which arms to run.
        #[arg(long, value_enum, default_value_t = ArmArg::Both)]
        arm: ArmArg,
        /// Neighbor weighting in the solution function.
        #[arg(long, value_enum, default_value_t = ModeArg::Proportional)]
        mode: ModeArg,
    },
    /// Stepwise regression baseline and combined forecast on the test set.
    Baseline {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        #[arg(long, value_name = "JSON")]
        segmentation: PathBuf,
        /// Walk-forward trial report supplying analogy estimates for the
        /// per-job minimum combination.
        #[arg(long, value_name = "JSON")]
        analogy_report: Option<PathBuf>,
    },
    /// Compare trained vs untrained runs, and optionally the analogy
    /// method against the regression baseline.
    Compare {
        #[arg(long, value_name = "JSON")]
        trained: PathBuf,
        #[arg(long, value_name = "JSON")]
        untrained: PathBuf,
        /// Baseline report for the method comparison.
        #[arg(long, value_name = "JSON")]
        baseline: Option<PathBuf>,
        /// Alternative hypothesis for the paired tests.
        #[arg(long, value_enum, default_value_t = TailArg::OneSided)]
        tail: TailArg,
    },
    /// Labor-cost indifference simulation and sensitivity sweep.
    Simulate {
        /// Jobs CSV supplying the cost distribution and, via its revenue
        /// column, the manual estimators' error distribution.
        #[arg(long, value_name = "CSV", required_unless_present = "auction_config", conflicts_with = "auction_config")]
        input: Option<PathBuf>,
        /// Walk-forward trial report supplying the method arm's error
        /// distribution (signed per-job percentage errors).
        #[arg(long, value_name = "JSON", required_unless_present = "auction_config", conflicts_with = "auction_config")]
        method_report: Option<PathBuf>,
        /// Complete auction configuration JSON (alternative to deriving
        /// the distributions from --input and --method-report).
        #[arg(long, value_name = "JSON")]
        auction_config: Option<PathBuf>,
        /// Total bidders including the firm.
        #[arg(long)]
        bidders: Option<usize>,
        /// Gross margin added on top of each cost estimate.
        #[arg(long)]
        margin: Option<f64>,
        /// Monte Carlo trials per simulation cell.
        #[arg(long)]
        trials: Option<usize>,
        /// Draw each arm's randomness independently instead of sharing
        /// common random numbers.
        #[arg(long)]
        no_crn: bool,
        /// Report the break-even estimation hours at this EUR hourly rate.
        #[arg(long)]
        hourly_rate: Option<f64>,
        /// Bidder counts for the sensitivity sweep (comma-separated).
        #[arg(long, value_delimiter = ',', requires = "sweep_margins")]
        sweep_bidders: Option<Vec<usize>>,
        /// Margins for the sensitivity sweep (comma-separated).
        #[arg(long, value_delimiter = ',', requires = "sweep_bidders")]
        sweep_margins: Option<Vec<f64>>,
    },
    /// Export CSV plot files from JSON report artifacts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("report_source").required(true).multiple(true).args(["trial", "sweep"])))]
struct ReportArgs {
    /// Walk-forward trial report to export (rows, weekly, segment CSVs).
    #[arg(long, value_name = "JSON", requires = "input")]
    trial: Option<PathBuf>,
    /// Jobs CSV the trial report was computed from (for calendar dates).
    #[arg(long, value_name = "CSV", requires = "trial")]
    input: Option<PathBuf>,
    /// Sensitivity sweep JSON to export as CSV.
    #[arg(long, value_name = "JSON")]
    sweep: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Proportional,
    Inverse,
}

impl From<ModeArg> for SolutionWeighting {
    fn from(mode: ModeArg) -> SolutionWeighting {
        match mode {
            ModeArg::Proportional => SolutionWeighting::Proportional,
            ModeArg::Inverse => SolutionWeighting::Inverse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArmArg {
    Untrained,
    Trained,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TailArg {
    /// H1: the first run's errors are lower.
    OneSided,
    TwoSided,
}

impl From<TailArg> for Tail {
    fn from(tail: TailArg) -> Tail {
        match tail {
            TailArg::OneSided => Tail::Greater,
            TailArg::TwoSided => Tail::TwoSided,
        }
    }
}

/// Parses the command line and runs it; usage errors exit with code 2.
pub fn run() -> anyhow::Result<()> {
    run_with(Cli::parse())
}

/// Resolved global state shared by the subcommands.
struct Ctx {
    master_seed: u64,
    out: PathBuf,
    paper_fidelity: bool,
    config: RunConfig,
    /// Path and digest of the config file, when one was given.
    config_input: Option<(String, String)>,
}

/// Runs an already-parsed invocation (separated from [`run`] for tests).
pub fn run_with(cli: Cli) -> anyhow::Result<()> {
    if cli.workers > 0 {
        let built = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
        if built.is_err() {
            eprintln!("warning: thread pool already initialized; --workers ignored");
        }
    }
    let (config, config_input) = match &cli.config {
        Some(path) => {
            let bytes = fs::read(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let config: RunConfig = serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing config {}", path.display()))?;
            (config, Some((path.display().to_string(), sha256_hex(&bytes))))
        }
        None => (RunConfig::default(), None),
    };
    let ctx = Ctx {
        master_seed: cli.seed,
        out: cli.out,
        paper_fidelity: cli.paper_fidelity,
        config,
        config_input,
    };
    match cli.command {
        Command::Synth { spec, jobs } => cmd_synth(&ctx, spec.as_deref(), jobs),
        Command::Ingest { input } => cmd_ingest(&ctx, &input),
        Command::Segment { input, historical_share } => {
            cmd_segment(&ctx, &input, historical_share)
        }
        Command::Train { input, segmentation, k, mode } => {
            cmd_train(&ctx, &input, &segmentation, k, mode.into())
        }
        Command::Backtest {
            input,
            segmentation,
            models,
            k,
            lag_days,
            replay_estimates,
            arm,
            mode,
        } => cmd_backtest(
            &ctx,
            &input,
            &segmentation,
            models.as_deref(),
            k,
            lag_days,
            replay_estimates,
            arm,
            mode.into(),
        ),
        Command::Baseline { input, segmentation, analogy_report } => {
            cmd_baseline(&ctx, &input, &segmentation, analogy_report.as_deref())
        }
        Command::Compare { trained, untrained, baseline, tail } => {
            cmd_compare(&ctx, &trained, &untrained, baseline.as_deref(), tail.into())
        }
        Command::Simulate {
            input,
            method_report,
            auction_config,
            bidders,
            margin,
            trials,
            no_crn,
            hourly_rate,
            sweep_bidders,
            sweep_margins,
        } => cmd_simulate(
            &ctx,
            input.as_deref(),
            method_report.as_deref(),
            auction_config.as_deref(),
            bidders,
            margin,
            trials,
            no_crn,
            hourly_rate,
            sweep_bidders,
            sweep_margins,
        ),
        Command::Report(args) => cmd_report(&ctx, &args),
    }
}

/// Collects the files a subcommand writes under the out root, recording
/// each one's digest for the manifest.
struct ArtifactSet {
    root: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl ArtifactSet {
    fn new(root: &Path) -> anyhow::Result<ArtifactSet> {
        for dir in ["data", "models", "reports", "manifests"] {
            fs::create_dir_all(root.join(dir))
                .with_context(|| format!("creating {}/{dir}", root.display()))?;
        }
        Ok(ArtifactSet { root: root.to_path_buf(), outputs: BTreeMap::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.root.join(rel);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

/// Reads an input file, recording its digest for the manifest.
fn read_input(inputs: &mut BTreeMap<String, String>, path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    inputs.insert(path.display().to_string(), sha256_hex(&bytes));
    String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
}

/// Parses a jobs CSV, failing if any row rejects (run `ingest` to inspect).
fn load_dataset(text: &str) -> anyhow::Result<Dataset> {
    let (dataset, rejections) = domain::parse_jobs_csv(text)?;
    if let Some(first) = rejections.first() {
        bail!(
            "{} rows rejected (first: row {}: {}); run the ingest command to inspect",
            rejections.len(),
            first.row,
            first.reason
        );
    }
    Ok(dataset)
}

fn load_segmentation(text: &str) -> anyhow::Result<Segmentation> {
    serde_json::from_str(text).context("parsing segmentation JSON")
}

/// Writes the subcommand's manifest; called last so it covers all outputs.
fn finish(
    ctx: &Ctx,
    artifacts: ArtifactSet,
    command: &str,
    config: serde_json::Value,
    digest_source: &[u8],
    mut inputs: BTreeMap<String, String>,
) -> anyhow::Result<()> {
    if let Some((path, digest)) = &ctx.config_input {
        inputs.insert(path.clone(), digest.clone());
    }
    let manifest = RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: ctx.master_seed,
        timestamp: manifest_timestamp(),
        config,
        config_digest: sha256_hex(digest_source),
        inputs,
        outputs: artifacts.outputs,
    };
    let path = artifacts.root.join("manifests").join(format!("{command}.json"));
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_synth(ctx: &Ctx, spec_path: Option<&Path>, jobs: Option<usize>) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    let seed = substream(ctx.master_seed, "synth");
    let spec = match spec_path {
        Some(path) => {
            let text = read_input(&mut inputs, path)?;
            let mut spec = SyntheticSpec::from_json(&text)?;
            spec.seed = seed;
            spec
        }
        None => SyntheticSpec::example(jobs.unwrap_or(1000), seed),
    };
    let dataset = synth::generate(&spec)?;
    artifacts.write("data/jobs.csv", domain::to_csv(&dataset).as_bytes())?;
    artifacts.write("data/synth_spec.json", spec.to_json().as_bytes())?;
    println!(
        "synth: {} jobs over {} lanes -> {}",
        dataset.len(),
        spec.lanes.len(),
        ctx.out.join("data/jobs.csv").display()
    );
    let config = serde_json::to_value(&spec)?;
    let digest_source = serde_json::to_vec(&spec)?;
    finish(ctx, artifacts, "synth", config, &digest_source, inputs)
}

fn cmd_ingest(ctx: &Ctx, input: &Path) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    let text = read_input(&mut inputs, input)?;
    let (dataset, rejections) = domain::parse_jobs_csv(&text)?;
    artifacts.write("data/jobs.csv", domain::to_csv(&dataset).as_bytes())?;
    artifacts.write(
        "reports/rejections.jsonl",
        domain::rejections_to_jsonl(&rejections).as_bytes(),
    )?;
    println!(
        "ingest: accepted {}, rejected {} -> {}",
        dataset.len(),
        rejections.len(),
        ctx.out.join("data/jobs.csv").display()
    );
    let config = json!({ "input": input.display().to_string() });
    let digest_source = serde_json::to_vec(&config)?;
    finish(ctx, artifacts, "ingest", config, &digest_source, inputs)
}

fn cmd_segment(ctx: &Ctx, input: &Path, historical_share: f64) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    let dataset = load_dataset(&read_input(&mut inputs, input)?)?;
    let seed = substream(ctx.master_seed, "segmentation");
    let segmentation = domain::segment(&dataset, seed, historical_share)?;
    artifacts.write(
        "data/segmentation.json",
        serde_json::to_vec_pretty(&segmentation)?.as_slice(),
    )?;
    println!(
        "segment: historical {}, training {}, test {} -> {}",
        segmentation.historical.len(),
        segmentation.training.len(),
        segmentation.test.len(),
        ctx.out.join("data/segmentation.json").display()
    );
    let config = json!({ "seed": seed, "historical_share": historical_share });
    let digest_source = serde_json::to_vec(&config)?;
    finish(ctx, artifacts, "segment", config, &digest_source, inputs)
}

/// Builds the effective training configuration: preset (desk or full
/// scale), then config-file overrides, then command-line flags.
fn resolve_training_config(
    ctx: &Ctx,
    k: Option<Vec<usize>>,
    mode: SolutionWeighting,
) -> TrainingConfig {
    let seed = substream(ctx.master_seed, "training");
    let mut cfg = if ctx.paper_fidelity {
        TrainingConfig::full_scale(seed)
    } else {
        TrainingConfig::desk_scale(seed)
    };
    let overrides = &ctx.config.training;
    if let Some(k_range) = &overrides.k_range {
        cfg.k_range = k_range.clone();
    }
    if let Some(iterations) = overrides.random_iterations {
        cfg.random_iterations = iterations;
    }
    if let Some(cap) = overrides.simplex_max_iterations {
        cfg.simplex.max_iterations = cap;
    }
    if let Some(epsilon) = overrides.exact_match_epsilon {
        cfg.exact_match_epsilon = epsilon;
    }
    if let Some(k_range) = k {
        cfg.k_range = k_range;
    }
    cfg.mode = mode;
    cfg
}

fn cmd_train(
    ctx: &Ctx,
    input: &Path,
    segmentation: &Path,
    k: Option<Vec<usize>>,
    mode: SolutionWeighting,
) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    let dataset = load_dataset(&read_input(&mut inputs, input)?)?;
    let segmentation = load_segmentation(&read_input(&mut inputs, segmentation)?)?;
    let historical = dataset.select(&segmentation.historical)?;
    let training = dataset.select(&segmentation.training)?;
    let cfg = resolve_training_config(ctx, k, mode);
    let models = training::train_all(&historical, &training, &cfg)?;
    for (k, model) in &models {
        artifacts.write(&format!("models/model_k{k}.json"), model.to_model_json().as_bytes())?;
        println!(
            "train: k={k} weights={:?} training MAPE {:.2}% (random search {:.2}%)",
            model.weights.as_array(),
            model.training_mape,
            model.random_search_mape
        );
    }
    artifacts.write(
        "reports/training_summary.json",
        serde_json::to_vec_pretty(&models)?.as_slice(),
    )?;
    let config = serde_json::to_value(&cfg)?;
    let digest_source = serde_json::to_vec(&cfg)?;
    finish(ctx, artifacts, "train", config, &digest_source, inputs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_backtest(
    ctx: &Ctx,
    input: &Path,
    segmentation: &Path,
    models_dir: Option<&Path>,
    k: Option<Vec<usize>>,
    lag_days: Option<i64>,
    replay_estimates: bool,
    arm: ArmArg,
    mode: SolutionWeighting,
) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    let dataset = load_dataset(&read_input(&mut inputs, input)?)?;
    let segmentation = load_segmentation(&read_input(&mut inputs, segmentation)?)?;
    let models_dir = models_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.out.join("models"));
    let ks = k.unwrap_or_else(|| (1..=6).collect());
    let lag = lag_days
        .or(ctx.config.backtest.lag_days)
        .unwrap_or(backtest::DEFAULT_LAG_DAYS);
    let epsilon = ctx.config.backtest.exact_match_epsilon.unwrap_or(1e-9);
    let seed = substream(ctx.master_seed, "backtest");

    let apply_common = |mut trial: TrialConfig| {
        trial.lag_days = lag;
        trial.include_estimated_test_jobs = replay_estimates;
        trial.exact_match_epsilon = epsilon;
        trial.seed = seed;
        trial.mode = mode;
        trial
    };
    let describe = |report: &TrialReport| match &report.overall {
        Some(stats) => format!(
            "MAPE {:.2}% Q3APE {:.2}% (n={}, skipped {})",
            stats.mape_pct,
            stats.q3_ape_pct,
            report.rows.len(),
            report.skipped.len()
        ),
        None => format!("all {} probes skipped", report.skipped.len()),
    };
    let write_report = |artifacts: &mut ArtifactSet,
                            label: &str,
                            kk: usize,
                            report: &TrialReport|
     -> anyhow::Result<()> {
        let stem = format!("trial_{label}_k{kk}");
        artifacts.write(&format!("reports/{stem}.json"), report.to_json()?.as_bytes())?;
        artifacts.write(
            &format!("reports/{stem}_rows.csv"),
            backtest::rows_to_csv(report, &dataset).as_bytes(),
        )?;
        artifacts.write(
            &format!("reports/{stem}_weekly.csv"),
            backtest::weekly_to_csv(report).as_bytes(),
        )?;
        println!("backtest: {label} k={kk} {}", describe(report));
        Ok(())
    };

    for &kk in &ks {
        if matches!(arm, ArmArg::Untrained | ArmArg::Both) {
            let trial = apply_common(TrialConfig::untrained(kk));
            let report = backtest::run_trial(&segmentation, &dataset, &trial)?;
            write_report(&mut artifacts, "untrained", kk, &report)?;
        }
        if matches!(arm, ArmArg::Trained | ArmArg::Both) {
            let model_path = models_dir.join(format!("model_k{kk}.json"));
            let text = read_input(&mut inputs, &model_path)
                .with_context(|| format!("loading trained model for k={kk}"))?;
            let model = training::TrainedModel::from_model_json(&text)?;
            let trial = apply_common(TrialConfig::trained(&model));
            let report = backtest::run_trial(&segmentation, &dataset, &trial)?;
            write_report(&mut artifacts, "trained", kk, &report)?;
        }
    }
    let config = json!({
        "k": ks,
        "lag_days": lag,
        "replay_estimates": replay_estimates,
        "arm": format!("{arm:?}").to_lowercase(),
        "mode": mode.label(),
        "exact_match_epsilon": epsilon,
        "seed": seed,
        "models_dir": models_dir.display().to_string(),
    });
    let digest_source = serde_json::to_vec(&config)?;
    finish(ctx, artifacts, "backtest", config, &digest_source, inputs)
}

/// Per-test-job outcome of the regression baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub id: u64,
    pub actual_eur: f64,
    pub regression_eur: f64,
    pub regression_ape_pct: f64,
    /// Analogy estimate from the supplied trial report, where present.
    pub analogy_eur: Option<f64>,
    /// Minimum of the analogy and regression estimates.
    pub combined_eur: Option<f64>,
    pub combined_ape_pct: Option<f64>,
}

/// Stepwise-regression baseline evaluated on the test segment, optionally
/// combined with analogy estimates by taking the per-job minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    /// Predictor groups the stepwise fit accepted, in acceptance order.
    pub selected_groups: Vec<String>,
    pub aic: f64,
    /// Jobs the model was fit on (historical plus training segments).
    pub n_fit: usize,
    /// k of the trial report supplying analogy estimates, when one was.
    pub analogy_k: Option<usize>,
    pub rows: Vec<BaselineRow>,
    pub regression_stats: ErrorStats,
    /// Error stats of the analogy estimates over the overlapping rows.
    pub analogy_stats: Option<ErrorStats>,
    pub combined_stats: Option<ErrorStats>,
}

impl BaselineReport {
    /// Serializes the report as pretty JSON.
    pub fn to_json(&self) -> CoreResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a report serialized by [`BaselineReport::to_json`].
    pub fn from_json(text: &str) -> CoreResult<BaselineReport> {
        Ok(serde_json::from_str(text)?)
    }
}

fn cmd_baseline(
    ctx: &Ctx,
    input: &Path,
    segmentation: &Path,
    analogy_report: Option<&Path>,
) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    let dataset = load_dataset(&read_input(&mut inputs, input)?)?;
    let segmentation = load_segmentation(&read_input(&mut inputs, segmentation)?)?;
    let mut fit_jobs = dataset.select(&segmentation.historical)?;
    fit_jobs.extend(dataset.select(&segmentation.training)?);
    let spec = ctx.config.feature_spec.clone().unwrap_or_default();
    let model = regression::fit_stepwise(&fit_jobs, &spec)?;
    artifacts.write("models/regression.json", model.to_json().as_bytes())?;

    let analogy = match analogy_report {
        Some(path) => {
            let report = TrialReport::from_json(&read_input(&mut inputs, path)?)?;
            let estimates: BTreeMap<u64, f64> =
                report.rows.iter().map(|row| (row.id, row.estimate_eur)).collect();
            Some((report.k, estimates))
        }
        None => None,
    };

    let test_jobs = dataset.select(&segmentation.test)?;
    let mut rows = Vec::with_capacity(test_jobs.len());
    for job in &test_jobs {
        let regression_eur = regression::predict(&model, job);
        let regression_ape_pct = stats::ape_pct(job.cost_eur, regression_eur)?;
        let analogy_eur = analogy
            .as_ref()
            .and_then(|(_, estimates)| estimates.get(&job.id).copied());
        let (combined_eur, combined_ape_pct) = match analogy_eur {
            Some(analogy_eur) => {
                let combined = regression::combine_min(analogy_eur, regression_eur)?;
                (Some(combined), Some(stats::ape_pct(job.cost_eur, combined)?))
            }
            None => (None, None),
        };
        rows.push(BaselineRow {
            id: job.id,
            actual_eur: job.cost_eur,
            regression_eur,
            regression_ape_pct,
            analogy_eur,
            combined_eur,
            combined_ape_pct,
        });
    }

    let actuals: Vec<f64> = rows.iter().map(|r| r.actual_eur).collect();
    let predictions: Vec<f64> = rows.iter().map(|r| r.regression_eur).collect();
    let regression_stats = ErrorStats::from_pairs(&actuals, &predictions)?;
    let overlap: Vec<&BaselineRow> =
        rows.iter().filter(|r| r.analogy_eur.is_some()).collect();
    let (analogy_stats, combined_stats) = if overlap.is_empty() {
        (None, None)
    } else {
        let actuals: Vec<f64> = overlap.iter().map(|r| r.actual_eur).collect();
        let analogy: Vec<f64> = overlap.iter().map(|r| r.analogy_eur.unwrap()).collect();
        let combined: Vec<f64> = overlap.iter().map(|r| r.combined_eur.unwrap()).collect();
        (
            Some(ErrorStats::from_pairs(&actuals, &analogy)?),
            Some(ErrorStats::from_pairs(&actuals, &combined)?),
        )
    };
    let report = BaselineReport {
        selected_groups: model.selected_groups.iter().map(|g| g.label().to_string()).collect(),
        aic: model.aic,
        n_fit: fit_jobs.len(),
        analogy_k: analogy.as_ref().map(|(k, _)| *k),
        rows,
        regression_stats,
        analogy_stats,
        combined_stats,
    };
    artifacts.write("reports/baseline.json", report.to_json()?.as_bytes())?;
    match (&report.analogy_stats, &report.combined_stats) {
        (Some(analogy), Some(combined)) => println!(
            "baseline: regression MAPE {:.2}%, analogy {:.2}%, combined {:.2}% (n={})",
            report.regression_stats.mape_pct,
            analogy.mape_pct,
            combined.mape_pct,
            report.rows.len()
        ),
        _ => println!(
            "baseline: regression MAPE {:.2}% (n={}, groups {:?})",
            report.regression_stats.mape_pct,
            report.rows.len(),
            report.selected_groups
        ),
    }
    let config = json!({
        "feature_spec": serde_json::to_value(&spec)?,
        "n_fit": report.n_fit,
        "analogy_k": report.analogy_k,
    });
    let digest_source = serde_json::to_vec(&config)?;
    finish(ctx, artifacts, "baseline", config, &digest_source, inputs)
}

/// Accuracy comparison of the analogy estimator against the regression
/// baseline and their minimum combination, paired on shared test jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub k: usize,
    /// Jobs present in both reports.
    pub n: usize,
    pub analogy_mape_pct: f64,
    pub regression_mape_pct: f64,
    pub combined_mape_pct: f64,
    pub analogy_q3ape_pct: f64,
    pub regression_q3ape_pct: f64,
    pub combined_q3ape_pct: f64,
    /// Mean per-job APE difference (regression - analogy), in points:
    /// positive favors the analogy estimator.
    pub mean_diff_pct: f64,
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub reject_at_95: bool,
    pub analogy_is_better: bool,
}

/// Pairs a walk-forward trial report with a baseline report by job id and
/// tests whether the analogy estimator's APEs beat the regression's.
pub fn method_comparison(
    trial: &TrialReport,
    baseline: &BaselineReport,
    tail: Tail,
) -> CoreResult<MethodComparison> {
    let by_id: BTreeMap<u64, &BaselineRow> =
        baseline.rows.iter().map(|row| (row.id, row)).collect();
    let mut analogy_apes = Vec::new();
    let mut regression_apes = Vec::new();
    let mut combined_apes = Vec::new();
    for row in &trial.rows {
        if let Some(base) = by_id.get(&row.id) {
            let combined = regression::combine_min(row.estimate_eur, base.regression_eur)?;
            analogy_apes.push(row.ape_pct);
            regression_apes.push(base.regression_ape_pct);
            combined_apes.push(stats::ape_pct(row.actual_eur, combined)?);
        }
    }
    if analogy_apes.len() < 2 {
        return Err(crate::Error::MismatchedReports(format!(
            "method comparison needs at least 2 shared jobs, found {}",
            analogy_apes.len()
        )));
    }
    let n = analogy_apes.len();
    let test = stats::paired_t_test(&regression_apes, &analogy_apes, tail)?;
    let mean = |values: &[f64]| values.iter().sum::<f64>() / values.len() as f64;
    Ok(MethodComparison {
        k: trial.k,
        n,
        analogy_mape_pct: mean(&analogy_apes),
        regression_mape_pct: mean(&regression_apes),
        combined_mape_pct: mean(&combined_apes),
        analogy_q3ape_pct: stats::percentile(&analogy_apes, 0.75)?,
        regression_q3ape_pct: stats::percentile(&regression_apes, 0.75)?,
        combined_q3ape_pct: stats::percentile(&combined_apes, 0.75)?,
        mean_diff_pct: test.mean_diff,
        t: test.t,
        p: test.p,
        df: test.df,
        reject_at_95: test.p < 0.05,
        analogy_is_better: test.mean_diff > 0.0,
    })
}

fn cmd_compare(
    ctx: &Ctx,
    trained: &Path,
    untrained: &Path,
    baseline: Option<&Path>,
    tail: Tail,
) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    let trained_report = TrialReport::from_json(&read_input(&mut inputs, trained)?)?;
    let untrained_report = TrialReport::from_json(&read_input(&mut inputs, untrained)?)?;
    let comparison = backtest::compare_reports(&trained_report, &untrained_report, tail)?;
    artifacts.write(
        &format!("reports/comparison_k{}.json", comparison.k),
        serde_json::to_vec_pretty(&comparison)?.as_slice(),
    )?;
    println!(
        "compare: k={} trained MAPE {:.2}% vs untrained {:.2}% (t={:.3}, p={:.4}{})",
        comparison.k,
        comparison.trained_mape_pct,
        comparison.untrained_mape_pct,
        comparison.t,
        comparison.p,
        if comparison.reject_at_95 {
            if comparison.trained_is_better {
                ", trained better at 95%"
            } else {
                ", untrained better at 95%"
            }
        } else {
            ""
        }
    );
    if let Some(path) = baseline {
        let baseline_report = BaselineReport::from_json(&read_input(&mut inputs, path)?)?;
        let methods = method_comparison(&trained_report, &baseline_report, tail)?;
        artifacts.write(
            "reports/method_comparison.json",
            serde_json::to_vec_pretty(&methods)?.as_slice(),
        )?;
        println!(
            "compare: analogy MAPE {:.2}% vs regression {:.2}%, combined {:.2}% (n={}, p={:.4})",
            methods.analogy_mape_pct,
            methods.regression_mape_pct,
            methods.combined_mape_pct,
            methods.n,
            methods.p
        );
    }
    let config = json!({
        "tail": match tail { Tail::Greater => "one-sided", Tail::TwoSided => "two-sided" },
    });
    let digest_source = serde_json::to_vec(&config)?;
    finish(ctx, artifacts, "compare", config, &digest_source, inputs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    ctx: &Ctx,
    input: Option<&Path>,
    method_report: Option<&Path>,
    auction_config: Option<&Path>,
    bidders: Option<usize>,
    margin: Option<f64>,
    trials: Option<usize>,
    no_crn: bool,
    hourly_rate: Option<f64>,
    sweep_bidders: Option<Vec<usize>>,
    sweep_margins: Option<Vec<f64>>,
) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    let seed = substream(ctx.master_seed, "simulation");
    let mut cfg = match auction_config {
        Some(path) => {
            let mut cfg: AuctionConfig = serde_json::from_str(&read_input(&mut inputs, path)?)
                .with_context(|| format!("parsing auction config {}", path.display()))?;
            cfg.seed = seed;
            cfg
        }
        None => {
            // clap guarantees both paths are present on this branch
            let dataset = load_dataset(&read_input(&mut inputs, input.unwrap())?)?;
            let profile = economics::derive_manual_margin_from_jobs(dataset.jobs())?;
            artifacts.write(
                "reports/manual_profile.json",
                serde_json::to_vec_pretty(&profile)?.as_slice(),
            )?;
            println!(
                "simulate: manual margin t={:.4} (MAPE {:.2}%, n={})",
                profile.t, profile.mape_pct, profile.n
            );
            let manual: Vec<f64> = profile.errors_pct.iter().map(|e| e / 100.0).collect();
            let trial = TrialReport::from_json(&read_input(&mut inputs, method_report.unwrap())?)?;
            if trial.rows.is_empty() {
                bail!("method report contains no estimated jobs");
            }
            let method: Vec<f64> = trial.rows.iter().map(|r| r.error_pct / 100.0).collect();
            let costs: Vec<f64> = dataset.jobs().iter().map(|j| j.cost_eur).collect();
            AuctionConfig::new(costs, manual.clone(), method, manual, seed)
        }
    };
    let overrides = &ctx.config.auction;
    if let Some(n) = bidders.or(overrides.n_bidders) {
        cfg.n_bidders = n;
    }
    if let Some(m) = margin.or(overrides.target_margin) {
        cfg.target_margin = m;
    }
    if let Some(t) = trials.or(overrides.trials) {
        cfg.trials = t;
    }
    if no_crn {
        cfg.common_random_numbers = false;
    } else if let Some(crn) = overrides.common_random_numbers {
        cfg.common_random_numbers = crn;
    }

    let result = economics::simulate_indifference(&cfg)?;
    artifacts.write("reports/indifference.json", result.to_json()?.as_bytes())?;
    println!(
        "simulate: indifference cost {:.2} EUR/job [{:.2}, {:.2}] over {} trials (win rates: manual {:.1}%, method {:.1}%)",
        result.indifference_cost_eur,
        result.ci_lo_eur,
        result.ci_hi_eur,
        result.trials,
        100.0 * result.manual_win_rate,
        100.0 * result.method_win_rate
    );
    if let Some(rate) = hourly_rate {
        let hours = economics::break_even_hours(result.indifference_cost_eur, rate)?;
        let break_even = json!({
            "hourly_rate_eur": rate,
            "indifference_cost_eur": result.indifference_cost_eur,
            "break_even_hours": hours,
        });
        artifacts.write(
            "reports/break_even.json",
            serde_json::to_vec_pretty(&break_even)?.as_slice(),
        )?;
        println!("simulate: break-even estimation effort {hours:.2} hours/job at {rate:.2} EUR/hour");
    }
    if let (Some(sweep_bidders), Some(sweep_margins)) = (&sweep_bidders, &sweep_margins) {
        let grid = economics::sensitivity_sweep(&cfg, sweep_bidders, sweep_margins)?;
        artifacts.write("reports/sweep.json", grid.to_json()?.as_bytes())?;
        artifacts.write("reports/sweep.csv", economics::sweep_to_csv(&grid).as_bytes())?;
        println!(
            "simulate: sensitivity sweep {}x{} -> {}",
            sweep_bidders.len(),
            sweep_margins.len(),
            ctx.out.join("reports/sweep.csv").display()
        );
    }
    // the manifest summarizes the (potentially large) distributions but
    // digests the full configuration
    let config = json!({
        "n_bidders": cfg.n_bidders,
        "target_margin": cfg.target_margin,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "common_random_numbers": cfg.common_random_numbers,
        "n_costs": cfg.costs.len(),
        "n_manual_errors": cfg.manual_errors.len(),
        "n_method_errors": cfg.method_errors.len(),
        "n_competitor_errors": cfg.competitor_errors.len(),
        "hourly_rate": hourly_rate,
        "sweep_bidders": sweep_bidders,
        "sweep_margins": sweep_margins,
    });
    let digest_source = serde_json::to_vec(&cfg)?;
    finish(ctx, artifacts, "simulate", config, &digest_source, inputs)
}

/// Segment accuracy tables flattened to CSV, one row per segment.
fn segments_to_csv(report: &TrialReport) -> String {
    let mut out = String::from("table,label,n,mape_pct,se_pct,ci_lo_pct,ci_hi_pct\n");
    let tables = [
        ("load_size", &report.segments.load_size),
        ("collection_region", &report.segments.collection_region),
        ("delivery_region", &report.segments.delivery_region),
        ("direction", &report.segments.direction),
    ];
    for (table, rows) in tables {
        for row in rows {
            match &row.stats {
                Some(stats) => writeln!(
                    out,
                    "{table},{},{},{},{},{},{}",
                    row.label, row.n, stats.mape_pct, stats.se_pct, stats.ci_lo_pct, stats.ci_hi_pct
                )
                .expect("write to string"),
                None => writeln!(out, "{table},{},{},,,,", row.label, row.n)
                    .expect("write to string"),
            }
        }
    }
    out
}

fn cmd_report(ctx: &Ctx, args: &ReportArgs) -> anyhow::Result<()> {
    let mut artifacts = ArtifactSet::new(&ctx.out)?;
    let mut inputs = BTreeMap::new();
    if let Some(trial_path) = &args.trial {
        // clap guarantees --input accompanies --trial
        let dataset = load_dataset(&read_input(&mut inputs, args.input.as_ref().unwrap())?)?;
        let report = TrialReport::from_json(&read_input(&mut inputs, trial_path)?)?;
        let stem = trial_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trial".to_string());
        artifacts.write(
            &format!("reports/{stem}_rows.csv"),
            backtest::rows_to_csv(&report, &dataset).as_bytes(),
        )?;
        artifacts.write(
            &format!("reports/{stem}_weekly.csv"),
            backtest::weekly_to_csv(&report).as_bytes(),
        )?;
        artifacts.write(
            &format!("reports/{stem}_segments.csv"),
            segments_to_csv(&report).as_bytes(),
        )?;
        println!(
            "report: exported rows, weekly, and segment CSVs for {} (k={})",
            stem, report.k
        );
    }
    if let Some(sweep_path) = &args.sweep {
        let grid = SweepGrid::from_json(&read_input(&mut inputs, sweep_path)?)?;
        let stem = sweep_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sweep".to_string());
        artifacts.write(
            &format!("reports/{stem}.csv"),
            economics::sweep_to_csv(&grid).as_bytes(),
        )?;
        println!("report: exported sweep CSV for {stem}");
    }
    let config = json!({
        "trial": args.trial.as_ref().map(|p| p.display().to_string()),
        "sweep": args.sweep.as_ref().map(|p| p.display().to_string()),
    });
    let digest_source = serde_json::to_vec(&config)?;
    finish(ctx, artifacts, "report", config, &digest_source, inputs)
}
