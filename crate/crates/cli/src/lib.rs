//! Command-line orchestration for the fluorosense simulator.

pub mod manifest;
pub mod plots;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use fluorosense::pipeline::{self, AnalysisOutput, Artifact};
use fluorosense::scanner::{oracle_file_name, ScanTable};
use fluorosense::spectral::Spectrum;
use fluorosense::ExperimentConfig;

use crate::manifest::RunManifest;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(
    name = "fluorosense",
    version,
    about = "Ratiometric fluorescence sensing simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML). Defaults apply to anything not set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Disable detector and spectrometer noise and tissue heterogeneity.
    #[arg(long)]
    pub no_noise: bool,
    /// Also write SVG plots.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Emission spectra at the tumour centre, the margin and in healthy tissue.
    Synth(CommonArgs),
    /// Phantom, raster scan, line profile and spectrometer spectra.
    Scan(CommonArgs),
    /// Ratio map, ROC and summary from a scan CSV.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// ScanMap CSV written by `scan`.
        scan: PathBuf,
        /// Directory of per-cell spectrometer spectra. Defaults to the
        /// `oracle` directory next to the scan CSV when present.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Full pipeline: synth, scan and analyze in one run.
    Report(CommonArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<fluorosense::Error> for CliError {
    fn from(e: fluorosense::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Effective configuration after applying command-line overrides.
pub fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| {
                let detail = match e {
                    fluorosense::Error::Config(detail) => detail,
                    other => other.to_string(),
                };
                CliError::Config(format!("{}: {detail}", path.display()))
            })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if args.no_noise {
        cfg = cfg.without_noise();
    }
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Writes artifacts, the effective config and the manifest under
/// `cfg.output_dir`.
fn emit(
    command: &str,
    cfg: &ExperimentConfig,
    artifacts: &[Artifact],
    started: (SystemTime, Instant),
) -> Result<RunManifest, CliError> {
    let config_toml = cfg.to_toml()?;
    let mut manifest = RunManifest::new(command, cfg.seed, &config_toml);
    let out = &cfg.output_dir;
    let echo = Artifact {
        name: CONFIG_ECHO_FILE.to_string(),
        bytes: config_toml.into_bytes(),
    };
    for a in artifacts.iter().chain(std::iter::once(&echo)) {
        let path = out.join(&a.name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        fs::write(&path, &a.bytes).map_err(|e| io_error(&path, e))?;
        manifest.record(&a.name, &a.bytes);
    }
    manifest.started_unix_seconds = started
        .0
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    manifest.wall_clock_seconds = started.1.elapsed().as_secs_f64();
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| io_error(&path, e))?;
    Ok(manifest)
}

fn plot_artifacts(analysis: &AnalysisOutput) -> Vec<Artifact> {
    vec![
        Artifact {
            name: "ratio_map.svg".into(),
            bytes: plots::heatmap_svg(&analysis.ratio_map, &analysis.predicted, &analysis.truth)
                .into_bytes(),
        },
        Artifact {
            name: "roc.svg".into(),
            bytes: plots::roc_svg(&analysis.roc).into_bytes(),
        },
    ]
}

/// Reads the per-cell spectra written by `scan` for a raster of the given
/// size.
pub fn read_oracle_dir(dir: &Path, rows: usize, cols: usize) -> Result<Vec<Spectrum>, CliError> {
    let mut spectra = Vec::with_capacity(rows * cols);
    for k in 0..rows * cols {
        let path = dir.join(oracle_file_name(k / cols, k % cols));
        let file = fs::File::open(&path).map_err(|e| io_error(&path, e))?;
        spectra.push(Spectrum::read_csv(file, &path.display().to_string())?);
    }
    Ok(spectra)
}

fn summary_line(a: &AnalysisOutput) -> String {
    let s = &a.summary;
    let rs = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    format!(
        "auc {:.3}  sensitivity {:.3}  specificity {:.3}  threshold {:.3}  r_s tumour {}  r_s healthy {}",
        s.auc,
        s.sensitivity,
        s.specificity,
        s.optimal_threshold,
        rs(s.r_s_tumour),
        rs(s.r_s_healthy)
    )
}

/// Executes one command; returns the manifest of what was written.
pub fn run(cli: Cli) -> Result<RunManifest, CliError> {
    let started = (SystemTime::now(), Instant::now());
    match cli.command {
        Command::Synth(args) => {
            let cfg = load_config(&args)?;
            let artifacts = pipeline::synth_artifacts(&cfg)?;
            emit("synth", &cfg, &artifacts, started)
        }
        Command::Scan(args) => {
            let cfg = load_config(&args)?;
            let scan = pipeline::run_scan(&cfg)?;
            let artifacts = pipeline::scan_artifacts(&cfg, &scan)?;
            emit("scan", &cfg, &artifacts, started)
        }
        Command::Analyze {
            common,
            scan,
            oracle,
        } => {
            let cfg = load_config(&common)?;
            let file = fs::File::open(&scan).map_err(|e| io_error(&scan, e))?;
            let table = ScanTable::read_csv(file, &scan.display().to_string())?;
            let oracle_dir = oracle.or_else(|| {
                let sibling = scan
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(pipeline::ORACLE_DIR);
                sibling.is_dir().then_some(sibling)
            });
            let spectra = match &oracle_dir {
                Some(dir) => Some(read_oracle_dir(dir, table.rows, table.cols)?),
                None => None,
            };
            let analysis = pipeline::analyze(&cfg, &table, spectra.as_deref())?;
            let mut artifacts = pipeline::analysis_artifacts(&analysis)?;
            if common.plots {
                artifacts.extend(plot_artifacts(&analysis));
            }
            println!("{}", summary_line(&analysis));
            emit("analyze", &cfg, &artifacts, started)
        }
        Command::Report(args) => {
            let cfg = load_config(&args)?;
            let mut artifacts = pipeline::synth_artifacts(&cfg)?;
            let (scan, analysis) = pipeline::run_report(&cfg)?;
            artifacts.extend(pipeline::scan_artifacts(&cfg, &scan)?);
            artifacts.extend(pipeline::analysis_artifacts(&analysis)?);
            if args.plots {
                artifacts.extend(plot_artifacts(&analysis));
            }
            println!("{}", summary_line(&analysis));
            emit("report", &cfg, &artifacts, started)
        }
    }
}
