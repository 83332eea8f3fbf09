//! The `raterkit` command line. Every command writes its outputs and a
//! `report.json` into `--out`; `replay` re-runs a command from a report.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 STAPLE did not
//! converge (outputs are still written).

mod commands;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::eval::{Phi, SkewSpec, ToleranceSpec};
use crate::fusion::{Prior, SimpleScore};
use crate::io::RunReport;
use crate::raters::StdForm;
use crate::synth::Geometry;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

/// Thread-count environment variable read by the binary.
pub const THREADS_ENV: &str = "RATERKIT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "raterkit",
    version,
    about = "Annotator agreement, ground-truth fusion and P̄-R evaluation"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Agreement map, agreement curve, Smyth bound and image features.
    Agree(AgreeArgs),
    /// Pairwise F1, Ward dendrogram, outliers and per-rater statistics.
    Raters(RatersArgs),
    /// Fuse the annotations into one ground truth.
    Fuse(FuseArgs),
    /// P̄-R curves of responses against ground truths.
    Eval(EvalArgs),
    /// Rank detectors by AUC under several ground truths.
    Rank(RankArgs),
    /// Generate a synthetic scene, annotator cohort and detector response.
    Simulate(SimulateArgs),
    /// Re-run a command from its report.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AgreeArgs {
    /// Stack manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RatersArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Consensus threshold of the reference for the statistics table.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Standard deviation used by the outlier rule.
    #[arg(long, value_enum, default_value_t = StdForm::Population)]
    pub std: StdForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuseMethod {
    Any,
    Vote,
    Vote75,
    ExclVote,
    Staple,
    Simple,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FuseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: FuseMethod,
    /// Threshold for `vote` and `excl-vote`.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = StdForm::Population)]
    pub std: StdForm,
    /// STAPLE prior: a number in (0, 1) or `empirical`.
    #[arg(long, default_value = "empirical")]
    pub prior: PriorArg,
    #[arg(long, default_value_t = 0.9)]
    pub init_p: f64,
    #[arg(long, default_value_t = 0.9)]
    pub init_q: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// SIMPLE agreement score.
    #[arg(long, value_enum, default_value_t = SimpleScore::Kappa)]
    pub score: SimpleScore,
    /// SIMPLE drop threshold, in standard deviations below the mean score.
    #[arg(long, default_value_t = 1.0)]
    pub drop_margin: f64,
    #[arg(long, default_value_t = 10)]
    pub max_rounds: usize,
}

/// STAPLE prior as a command-line value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorArg(pub Prior);

impl FromStr for PriorArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(PriorArg)
    }
}

/// Dataset ratio as a command-line value: a number or `dataset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhiArg(pub Phi);

impl FromStr for PhiArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "dataset" {
            return Ok(PhiArg(Phi::Dataset));
        }
        s.parse::<f64>()
            .map(|v| PhiArg(Phi::Fixed(v)))
            .map_err(|_| format!("expected a positive number or `dataset`, got `{s}`"))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SkewArgs {
    /// Lower end of the integrated skew range.
    #[arg(long, default_value_t = 0.1)]
    pub pi1: f64,
    /// Upper end of the integrated skew range.
    #[arg(long, default_value_t = 0.5)]
    pub pi2: f64,
    /// Positive/negative ratio; `dataset` uses N_p/N_n of each ground truth.
    #[arg(long, default_value = "dataset")]
    pub phi: PhiArg,
    /// Matching tolerance: `exact`, `px:R` or `diag:F`.
    #[arg(long, default_value = "exact")]
    pub tolerance: ToleranceSpec,
    /// JSON list of sub-image extents `{x, y, width, height}`.
    #[arg(long)]
    pub extents: Option<PathBuf>,
    /// Region-of-interest mask.
    #[arg(long)]
    pub roi: Option<PathBuf>,
    /// Thin ground truths to one-pixel curves first.
    #[arg(long)]
    pub thin: bool,
}

impl SkewArgs {
    pub fn spec(&self) -> SkewSpec {
        SkewSpec {
            pi1: self.pi1,
            pi2: self.pi2,
            phi: self.phi.0,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Response map (PGM, PNG or CSV); repeatable.
    #[arg(long, required = true)]
    pub response: Vec<PathBuf>,
    /// Ground-truth mask; repeatable. Defaults to the vote ground truths of
    /// `--manifest`.
    #[arg(long)]
    pub gt: Vec<PathBuf>,
    /// Stack manifest: enables CCO/CCI and Any/0.75 bounds, and supplies ROI
    /// and extents when not given.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub skew: SkewArgs,
    /// Also write `curves.svg`.
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RankArgs {
    /// Named list of detector responses.
    #[arg(long)]
    pub responses: PathBuf,
    /// Named list of ground-truth masks.
    #[arg(long)]
    pub gts: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub skew: SkewArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// One simulated annotator as `p,q,bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileArg {
    pub p: f64,
    pub q: f64,
    pub bias: i32,
}

impl FromStr for ProfileArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || format!("profile must be `p,q,bias`, got `{s}`");
        let [p, q, b] = parts[..] else {
            return Err(bad());
        };
        Ok(ProfileArg {
            p: p.parse().map_err(|_| bad())?,
            q: q.parse().map_err(|_| bad())?,
            bias: b.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Geometry::Areal)]
    pub geometry: Geometry,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Annotator `p,q,bias`; repeatable. Defaults to five at `0.9,0.99,0`.
    #[arg(long)]
    pub profile: Vec<ProfileArg>,
    /// Number of polylines or blobs.
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    pub blob_radius: f64,
    #[arg(long, default_value_t = 0.3)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Morphological bias of the simulated detector.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub detector_bias: i32,
    #[arg(long, default_value_t = 1.5)]
    pub detector_blur: f64,
    #[arg(long, default_value_t = 0.1)]
    pub detector_noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Report written by an earlier run.
    #[arg(long)]
    pub report: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

/// Result of a successful command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    pub summary: Vec<String>,
    pub exit_code: i32,
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::Agree(a) => commands::agree(&a),
        Command::Raters(a) => commands::raters(&a),
        Command::Fuse(a) => commands::fuse(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Rank(a) => commands::rank(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Replay(a) => replay(&a),
    }
}

/// Rebuild the command recorded in a report, optionally redirecting its
/// output directory.
pub fn command_from_report(
    report: &RunReport,
    out_dir: Option<&Path>,
) -> Result<Command, CliError> {
    let mut config = report.config.clone();
    if let Some(dir) = out_dir {
        config["out"] = serde_json::Value::String(dir.display().to_string());
    }
    let bad = |e: serde_json::Error| {
        usage(format!(
            "report config does not describe `{}`: {e}",
            report.command
        ))
    };
    Ok(match report.command.as_str() {
        "agree" => Command::Agree(serde_json::from_value(config).map_err(bad)?),
        "raters" => Command::Raters(serde_json::from_value(config).map_err(bad)?),
        "fuse" => Command::Fuse(serde_json::from_value(config).map_err(bad)?),
        "eval" => Command::Eval(serde_json::from_value(config).map_err(bad)?),
        "rank" => Command::Rank(serde_json::from_value(config).map_err(bad)?),
        "simulate" => Command::Simulate(serde_json::from_value(config).map_err(bad)?),
        other => return Err(usage(format!("cannot replay command `{other}`"))),
    })
}

fn replay(args: &ReplayArgs) -> Result<Outcome, CliError> {
    let report = RunReport::read(&args.report)?;
    run(command_from_report(&report, args.out_dir.as_deref())?)
}
