//! Config-driven experiment runner behind the `gradopt` binary.
//!
//! A run parses one TOML config, validates it completely, then executes the
//! experiment and writes CSV tables, `summary.json` and `manifest.json` into
//! the output directory. The manifest holds the config text and effective
//! seed, so [`replay`] can regenerate every CSV and compare hashes.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, Kind};
pub use experiments::{Check, Report};
use output::{Manifest, OutputDir, OutputFile};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "GRADOPT_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Schema or parameter problem found before any computation.
    #[error("config error: {0}")]
    Config(String),
    #[error("property checks failed: {}", .0.join(", "))]
    Checks(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Checks(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Reject configs of any other kind.
    pub expect: Option<Kind>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub config_path: String,
    pub seed: u64,
    /// The parsed config, after overrides.
    pub inputs: serde_json::Value,
    pub derived: serde_json::Value,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub notes: Vec<String>,
    pub wall_time_secs: f64,
    pub outputs: Vec<OutputFile>,
}

impl Summary {
    pub fn failed_checks(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect()
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summary: Summary,
}

pub fn read_config(path: &Path) -> Result<(String, ExperimentConfig), CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = ExperimentConfig::parse(&text, &path.display().to_string())?;
    Ok((text, cfg))
}

/// Parses and validates without running anything.
pub fn validate(path: &Path) -> Result<ExperimentConfig, CliError> {
    let (_, cfg) = read_config(path)?;
    experiments::prepare(&cfg)?;
    Ok(cfg)
}

fn out_dir_for(path: &Path, cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(out) = &opts.out {
        return out.clone();
    }
    if let Some(out) = &cfg.run().out_dir {
        return out.clone();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    match std::env::var_os(OUT_DIR_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(stem),
        _ => PathBuf::from("gradopt-out").join(stem),
    }
}

/// Runs the config at `path`. Failed property checks still produce all
/// artifacts; they show up in `Summary::failed_checks`.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<Outcome, CliError> {
    let (text, cfg) = read_config(path)?;
    run_parsed(path, &text, cfg, opts)
}

fn run_parsed(path: &Path, text: &str, mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    if let Some(kind) = opts.expect {
        if cfg.kind() != kind {
            return Err(CliError::Config(format!(
                "{}: config kind is `{}`, this subcommand runs `{}`",
                path.display(),
                cfg.kind().name(),
                kind.name()
            )));
        }
    }
    if let Some(seed) = opts.seed {
        cfg.run_mut().seed = seed;
    }
    if let Some(threads) = opts.threads {
        cfg.run_mut().threads = Some(threads);
    }
    if cfg.run().threads == Some(0) {
        return Err(CliError::Config("run.threads must be at least 1".into()));
    }
    let experiment = experiments::prepare(&cfg)?;
    let root = out_dir_for(path, &cfg, opts);
    let mut out = OutputDir::create(&root)?;

    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run().threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let report = pool.install(|| experiment.execute(&mut out))?;
    let wall_time_secs = start.elapsed().as_secs_f64();

    let manifest = Manifest {
        tool: "gradopt".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.kind().name().into(),
        config_path: path.display().to_string(),
        config_text: text.to_string(),
        seed: cfg.run().seed,
        threads: cfg.run().threads,
        outputs: out.files().to_vec(),
    };
    out.json("manifest.json", &manifest)?;
    let passed = report.checks.iter().all(|c| c.passed);
    let summary = Summary {
        kind: cfg.kind().name().into(),
        config_path: path.display().to_string(),
        seed: cfg.run().seed,
        inputs: serde_json::to_value(&cfg)?,
        derived: report.derived,
        checks: report.checks,
        passed,
        notes: report.notes,
        wall_time_secs,
        outputs: out.files().to_vec(),
    };
    out.json("summary.json", &summary)?;
    Ok(Outcome { out_dir: root, summary })
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub outcome: Outcome,
    /// Files whose hash differs from the manifest, or that are missing.
    pub mismatched: Vec<String>,
}

/// Re-runs a manifest into `out` (default: `replay/` next to the manifest)
/// and compares every CSV hash with the recorded one.
pub fn replay(manifest_path: &Path, out: Option<PathBuf>) -> Result<ReplayOutcome, CliError> {
    let manifest = Manifest::load(manifest_path)?;
    let cfg = ExperimentConfig::parse(&manifest.config_text, &manifest.config_path)?;
    let out = out.unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).join("replay"));
    let opts = RunOptions { out: Some(out), seed: Some(manifest.seed), threads: manifest.threads, expect: None };
    let outcome = run_parsed(Path::new(&manifest.config_path), &manifest.config_text, cfg, &opts)?;
    let mut mismatched = Vec::new();
    for want in &manifest.outputs {
        match outcome.summary.outputs.iter().find(|f| f.file == want.file) {
            Some(got) if got.sha256 == want.sha256 => {}
            _ => mismatched.push(want.file.clone()),
        }
    }
    for got in &outcome.summary.outputs {
        if !manifest.outputs.iter().any(|f| f.file == got.file) {
            mismatched.push(got.file.clone());
        }
    }
    Ok(ReplayOutcome { outcome, mismatched })
}
