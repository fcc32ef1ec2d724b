// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end. Everything except process exit lives here so the
//! binary stays a one-liner and commands are callable from tests.

mod commands;
mod config;
mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

pub use report::{merge_artifacts, DidDocument, EffectRow, EffectTable};

use crate::error::{Error, Result};

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "CAUSAL_PANEL_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "causal-panel",
    version,
    about = "Policy-effect estimation on device telemetry panels"
)]
pub struct Cli {
    /// Directory receiving result files.
    #[arg(long, global = true, env = OUT_ENV, default_value = ".")]
    pub out: PathBuf,
    /// Encoding of the main result document.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Seed for generation and clustering.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only warnings and errors on stderr; no summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// TOML file of default flags (top level and per-command tables).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate telemetry (and optionally policy codes) into a panel file.
    Ingest(IngestArgs),
    /// Difference-in-differences on a panel.
    Did(DidArgs),
    /// Synthetic control with optional placebo inference.
    Synth(SynthArgs),
    /// Offline change-point detection on one series.
    Cpd(CpdArgs),
    /// Persona clustering, windowed counts and persona change points.
    Persona(PersonaArgs),
    /// Generate a scenario with ground truth.
    Simulate(SimulateArgs),
    /// Merge did/synth result documents into one effect table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub telemetry: PathBuf,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Policy indicator column (exact name or unique prefix).
    #[arg(long, default_value = "C2")]
    pub indicator: String,
    /// usage_hours or cpu_watts.
    #[arg(long, default_value = "usage_hours")]
    pub outcome: String,
    #[arg(long = "group-by", value_delimiter = ',', default_value = "unit_id")]
    pub group_by: Vec<String>,
    #[arg(long)]
    pub chassis: Option<String>,
    #[arg(long = "cpu-family")]
    pub cpu_family: Option<String>,
    #[arg(long)]
    pub vpro: Option<bool>,
    /// Base name of the panel file.
    #[arg(long, default_value = "panel")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct DidArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub treated: Vec<String>,
    /// Control units; defaults to every other panel unit.
    #[arg(long, value_delimiter = ',')]
    pub control: Vec<String>,
    /// First treated day; defaults to the treated units' policy activation.
    #[arg(long = "treatment-date")]
    pub treatment_date: Option<NaiveDate>,
    #[arg(long = "time-trend")]
    pub time_trend: bool,
    #[arg(long = "covariate")]
    pub covariates: Vec<String>,
    /// Unit label table for categorical controls.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Label columns expanded into dummies.
    #[arg(long = "categorical")]
    pub categorical: Vec<String>,
    /// Also report the pre-period slope comparison.
    #[arg(long)]
    pub diagnostic: bool,
    #[arg(long, default_value = "did")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EventChoice {
    Activation,
    Deactivation,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub treated: String,
    /// Donor units; defaults to every other panel unit.
    #[arg(long, value_delimiter = ',')]
    pub donors: Vec<String>,
    #[arg(long = "treatment-date")]
    pub treatment_date: Option<NaiveDate>,
    /// Policy event whose date is T0 when no date is given.
    #[arg(long, value_enum, default_value_t = EventChoice::Activation)]
    pub event: EventChoice,
    #[arg(long = "covariate")]
    pub covariates: Vec<String>,
    /// Fit on the last N pre-period days (deactivation studies default to 60).
    #[arg(long = "pre-window-days")]
    pub pre_window_days: Option<usize>,
    #[arg(long = "post-window-days")]
    pub post_window_days: Option<usize>,
    #[arg(long)]
    pub placebo: bool,
    #[arg(long = "max-iterations", default_value_t = 10_000)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value = "synth")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyChoice {
    Aic,
    Bic,
    Manual,
}

#[derive(Debug, Args)]
pub struct CpdArgs {
    /// Panel file; pick the series with --unit.
    #[arg(long, conflicts_with = "series")]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub unit: Option<String>,
    /// Two-column `date,value` file (`NA` for missing).
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PenaltyChoice::Bic)]
    pub penalty: PenaltyChoice,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Exact number of segments instead of penalized selection.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long = "noise-scale")]
    pub noise_scale: Option<f64>,
    #[arg(long = "max-segments", default_value_t = crate::changepoint::DEFAULT_MAX_SEGMENTS)]
    pub max_segments: usize,
    /// Comma-separated manual penalties for a sensitivity scan.
    #[arg(long, value_delimiter = ',')]
    pub stability: Vec<f64>,
    #[arg(long, default_value = "cpd")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct PersonaArgs {
    #[arg(long)]
    pub usage: PathBuf,
    /// Frozen model to reuse instead of fitting.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = crate::persona::DEFAULT_PERSONA_COUNT)]
    pub k: usize,
    /// Start of the window whose vectors train the model; defaults to the first date.
    #[arg(long = "fit-window")]
    pub fit_window: Option<NaiveDate>,
    #[arg(long, default_value_t = crate::persona::DEFAULT_WIDTH_DAYS)]
    pub width: usize,
    #[arg(long, default_value_t = crate::persona::DEFAULT_STRIDE_DAYS)]
    pub stride: usize,
    /// Name fitted clusters after the generator's persona profiles.
    #[arg(long = "generator-labels")]
    pub generator_labels: bool,
    #[arg(long, default_value = "persona")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML, or JSON by extension).
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// did or synth result documents.
    pub artifacts: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub name: String,
}

/// Result files of one command, written only after the command succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
}

impl Outputs {
    fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

const SUBCOMMANDS: [&str; 7] = ["ingest", "did", "synth", "cpd", "persona", "simulate", "report"];

fn init_logging(quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("CAUSAL_PANEL_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs a parsed command and writes its outputs.
pub fn execute(cli: &Cli) -> Result<Outputs> {
    let outputs = match &cli.command {
        Command::Ingest(a) => commands::ingest(cli, a)?,
        Command::Did(a) => commands::did(cli, a)?,
        Command::Synth(a) => commands::synth(cli, a)?,
        Command::Cpd(a) => commands::cpd(cli, a)?,
        Command::Persona(a) => commands::persona(cli, a)?,
        Command::Simulate(a) => commands::simulate(cli, a)?,
        Command::Report(a) => commands::report(cli, a)?,
    };
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    for (name, bytes) in &outputs.files {
        let path = cli.out.join(name);
        write_atomic(&path, bytes)?;
        log::info!("wrote {}", path.display());
    }
    Ok(outputs)
}

/// Full command-line entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Some(path) = config::config_path(&args) {
        match config::inject(args.clone(), Path::new(&path), &SUBCOMMANDS) {
            Ok(a) => args = a,
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        }
    }
    let cli = match Cli::command().try_get_matches_from(&args) {
        Ok(m) => match <Cli as clap::FromArgMatches>::from_arg_matches(&m) {
            Ok(c) => c,
            Err(e) => {
                let _ = e.print();
                return 2;
            }
        },
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.quiet);
    match execute(&cli) {
        Ok(outputs) => {
            if !cli.quiet && !outputs.summary.is_empty() {
                print!("{}", outputs.summary);
            }
            0
        }
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
