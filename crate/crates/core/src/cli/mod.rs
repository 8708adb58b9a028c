//! Command-line front end: pseudo-label generation, evaluation, the SD x BA
//! ablation grid, phantom emission and table reports.

mod commands;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::EvalParams;
use crate::reconstruction::PipelineConfig;
use crate::segmenter::SegmenterBackend;

pub use commands::{evaluate_mask, run_ablation_cell, volume_dsc, AblationCell, PLANE_VALIDITY_COLUMNS};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "vesselwall", version, about = "Carotid vessel-wall pseudo-labels and sparse-contour evaluation")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dense 3D pseudo-label from a volume and centerline tree.
    Pseudolabel(PipelineArgs),
    /// Evaluate a 3D label mask on sparse 2D expert annotations.
    Evaluate(EvaluateArgs),
    /// Run the sampling-distance x bifurcation-axis grid and pick a configuration.
    Ablate(AblateArgs),
    /// Pick a configuration from an existing ablation table.
    Select(SelectArgs),
    /// Write an analytic bifurcation phantom bundle.
    Phantom(PhantomArgs),
    /// Merge per-case CSVs into per-plane and per-dataset tables.
    Report(ReportArgs),
    /// Builtin oracle behind the external segmenter file protocol.
    #[command(hide = true)]
    OracleBatch { io_dir: PathBuf },
}

/// Segmenter choice on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmenterFlag {
    Builtin,
    Command(String),
}

impl std::str::FromStr for SegmenterFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "builtin" {
            return Ok(SegmenterFlag::Builtin);
        }
        match s.strip_prefix("cmd:") {
            Some(c) if !c.trim().is_empty() => Ok(SegmenterFlag::Command(c.trim().to_string())),
            _ => Err(format!("expected `builtin` or `cmd:<command>`, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum MaskFormat {
    #[default]
    Rvol,
    Nii,
}

impl MaskFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MaskFormat::Rvol => "rvol",
            MaskFormat::Nii => "nii",
        }
    }
}

/// Flags shared by every command that runs the pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Structured run configuration (JSON); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub volume: Option<PathBuf>,
    #[arg(long)]
    pub centerline: Option<PathBuf>,
    /// `builtin` or `cmd:<command>`.
    #[arg(long)]
    pub segmenter: Option<SegmenterFlag>,
    /// Sampling distance between cross-sections (mm).
    #[arg(long)]
    pub sd: Option<f64>,
    #[arg(long, overrides_with = "no_bifurcation_axis")]
    pub bifurcation_axis: bool,
    #[arg(long, overrides_with = "bifurcation_axis")]
    pub no_bifurcation_axis: bool,
    /// Arc distance from the bifurcation treated as the bifurcation area (mm).
    #[arg(long)]
    pub bif_region: Option<f64>,
    /// Arc offset of the branch points defining the bifurcation axis (mm).
    #[arg(long)]
    pub branch_offset: Option<f64>,
    /// Output voxel size (mm).
    #[arg(long)]
    pub grid: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: MaskFormat,
}

impl PipelineArgs {
    fn bifurcation_axis(&self) -> Option<bool> {
        match (self.bifurcation_axis, self.no_bifurcation_axis) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// 3D label mask (.rvol or .nii) with 0 background, 1 lumen, 2 wall.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of annotation JSON files.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Failed-slice radius around the plane centre (mm).
    #[arg(long)]
    pub failed_radius: Option<f64>,
    /// Case identifier; defaults to the mask file stem.
    #[arg(long)]
    pub case_id: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Optional analytic truth mask; adds 3D Dice columns to the plane report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Sampling distances to sweep (mm).
    #[arg(long = "sd-grid", value_delimiter = ',', default_values_t = [0.3, 0.6, 1.2])]
    pub sd_grid: Vec<f64>,
    #[arg(long)]
    pub failed_radius: Option<f64>,
    /// Configuration cells run concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    /// Ablation table in the ablation CSV layout.
    pub table: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// Phantom specification (JSON); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory of per-case CSVs; each file is one dataset.
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything a run needs; read from `--config` and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub volume: Option<PathBuf>,
    pub centerline: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub segmenter: SegmenterBackend,
    pub eval: EvalParams,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            volume: None,
            centerline: None,
            annotations: None,
            out: None,
            pipeline: PipelineConfig::default(),
            segmenter: SegmenterBackend::default(),
            eval: EvalParams::default(),
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> crate::Result<Self> {
        match path {
            Some(p) => crate::io::read_json(p).map_err(|e| match e {
                Error::Json(j) => Error::Format(format!("{}: {j}", p.display())),
                other => other,
            }),
            None => Ok(Self::default()),
        }
    }

    pub fn apply(&mut self, a: &PipelineArgs) {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut self.volume, &a.volume);
        set(&mut self.centerline, &a.centerline);
        set(&mut self.out, &a.out);
        let plan = &mut self.pipeline.plan;
        if let Some(v) = a.sd {
            plan.sd = v;
        }
        if let Some(v) = a.bifurcation_axis() {
            plan.use_bifurcation_axis = v;
        }
        if let Some(v) = a.bif_region {
            plan.bif_region = v;
        }
        if let Some(v) = a.branch_offset {
            plan.branch_offset = v;
        }
        if let Some(v) = a.grid {
            self.pipeline.poisson.spacing = v;
        }
        match &a.segmenter {
            Some(SegmenterFlag::Builtin) if !matches!(self.segmenter, SegmenterBackend::BuiltinOracle(_)) => {
                self.segmenter = SegmenterBackend::default();
            }
            Some(SegmenterFlag::Command(c)) => {
                let io_dir = self.out.clone().unwrap_or_else(|| PathBuf::from(".")).join("segmenter_io");
                self.segmenter = SegmenterBackend::external(c.clone(), io_dir);
            }
            _ => {}
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let p = &self.pipeline;
        let lengths = [
            ("sd", p.plan.sd),
            ("bif_region", p.plan.bif_region),
            ("branch_offset", p.plan.branch_offset),
            ("grid", p.poisson.spacing),
            ("section_spacing", p.section_spacing),
            ("failed_radius", self.eval.failed_radius),
            ("sample_step", self.eval.sample_step),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn require<'a>(slot: &'a Option<PathBuf>, flag: &str) -> crate::Result<&'a Path> {
        slot.as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("missing --{flag} (or `{flag}` in the config file)")))
    }
}

/// An error with the pipeline stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

pub(crate) trait Stage<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T, StageError>;
}

impl<T> Stage<T> for crate::Result<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage: stage.into(), source })
    }
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Pseudolabel(a) => commands::pseudolabel(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Select(a) => commands::select(&a),
        Command::Phantom(a) => commands::phantom(&a),
        Command::Report(a) => commands::report(&a),
        Command::OracleBatch { io_dir } => commands::oracle_batch(&io_dir),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
