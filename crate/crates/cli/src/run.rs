//! Subcommand execution and artifact layout.
//!
//! Every run appends an entry to `<out>/manifest.json`. Result files are
//! never overwritten: a second `infer` in the same directory writes
//! `infer_results.1.json` next to `infer_results.json`.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stepleak::attrinf::{self, TaskResult, UnitScore};
use stepleak::cohort::{load_cohort, Cohort};
use stepleak::features::{extract_user, write_feature_csv, FeatureVector};
use stepleak::linkage::{self, LinkResult};
use stepleak::synth;

use crate::config::{validate_config, ConfigError, DataSource, Diagnostic, ExperimentConfig};
use crate::report;

pub const TOOL: &str = "stepleak";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Synth,
    Features,
    Infer,
    Link,
    Report,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Synth => "synth",
            Subcommand::Features => "features",
            Subcommand::Infer => "infer",
            Subcommand::Link => "link",
            Subcommand::Report => "report",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(stepleak::Error),
    Io { path: PathBuf, source: std::io::Error },
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(ConfigError::Unreadable { .. }) => "config_unreadable",
            CliError::Config(ConfigError::Invalid(_)) => "invalid_config",
            CliError::Core(_) => "run_failed",
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// JSON error record printed on stderr.
    pub fn record(&self) -> serde_json::Value {
        let diagnostics: &[Diagnostic] = match self {
            CliError::Config(ConfigError::Invalid(d)) => d,
            _ => &[],
        };
        let message = match self {
            CliError::Config(ConfigError::Invalid(_)) => "invalid config".to_string(),
            other => other.to_string(),
        };
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "message": message,
                "diagnostics": diagnostics,
            }
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::Core(e) => e.fmt(f),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<stepleak::Error> for CliError {
    fn from(e: stepleak::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(stepleak::Error::from)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub runs: Vec<ManifestRun>,
}

fn append_manifest(out: &Path, run: ManifestRun) -> CliResult<()> {
    let path = out.join("manifest.json");
    let mut manifest = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(stepleak::Error::from)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest {
            tool: TOOL.to_string(),
            runs: Vec::new(),
        },
        Err(e) => return Err(io_err(&path)(e)),
    };
    manifest.runs.push(run);
    write_json(&path, &manifest)
}

/// First suffix `""`, `".1"`, `".2"`, ... for which none of `names` exist.
fn free_suffix(dir: &Path, names: &[(&str, &str)]) -> String {
    (0..)
        .map(|i| if i == 0 { String::new() } else { format!(".{i}") })
        .find(|sfx| names.iter().all(|(stem, ext)| !dir.join(format!("{stem}{sfx}.{ext}")).exists()))
        .expect("unbounded search")
}

pub fn load_data(cfg: &ExperimentConfig) -> CliResult<Cohort> {
    Ok(match &cfg.source {
        DataSource::Files { steps, attributes } => load_cohort(steps, attributes, cfg.age_threshold)?,
        DataSource::Synth(s) => synth::generate(s)?.to_cohort(cfg.age_threshold)?,
    })
}

/// Runs `sub` with the config at `config_path`.
pub fn run(sub: Subcommand, config_path: &Path, overrides: &Overrides) -> CliResult<Vec<PathBuf>> {
    let text = fs::read(config_path).map_err(|source| {
        CliError::Config(ConfigError::Unreadable {
            path: config_path.to_path_buf(),
            source,
        })
    })?;
    let mut cfg = validate_config(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.override_seed(seed);
    }
    let out = overrides
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("stepleak-out"));
    fs::create_dir_all(&out).map_err(io_err(&out))?;

    let body = || execute(sub, &cfg, &out);
    let outputs = match overrides.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?
            .install(body)?,
        None => body()?,
    };

    let config_sha256 = Sha256::digest(&text).iter().map(|b| format!("{b:02x}")).collect();
    append_manifest(
        &out,
        ManifestRun {
            subcommand: sub.as_str().to_string(),
            config_sha256,
            seed: cfg.seed,
            version: VERSION.to_string(),
            outputs: outputs
                .iter()
                .map(|p| p.strip_prefix(&out).unwrap_or(p).display().to_string())
                .collect(),
        },
    )?;
    Ok(outputs)
}

fn execute(sub: Subcommand, cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    match sub {
        Subcommand::Synth => run_synth(cfg, out),
        Subcommand::Features => run_features(cfg, out),
        Subcommand::Infer => run_infer(cfg, out),
        Subcommand::Link => run_link(cfg, out),
        Subcommand::Report => {
            let cohort = load_data(cfg)?;
            report::run_report(cfg, &cohort, out)
        }
    }
}

fn run_synth(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let DataSource::Synth(s) = &cfg.source else {
        return Err(CliError::Usage("`synth` needs a [synth] section".into()));
    };
    let generated = synth::generate(s)?;
    info!("generated {} users", generated.records.len());
    let steps = out.join("steps.csv");
    let attrs = out.join("attributes.csv");
    let latents = out.join("latents.json");
    generated.write_csv(create(&steps)?, create(&attrs)?)?;
    write_json(&latents, &generated.latents)?;
    Ok(vec![steps, attrs, latents])
}

fn run_features(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    if cfg.features.is_empty() {
        return Err(CliError::Usage("`features` needs [features] configs".into()));
    }
    let cohort = load_data(cfg)?;
    let dir = out.join("features");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut outputs = Vec::new();
    for f in &cfg.features {
        let mut vectors: Vec<FeatureVector> = Vec::new();
        for r in &cohort.records {
            vectors.extend(extract_user(r, &f.config, cohort.stats.max_steps)?);
        }
        let path = dir.join(format!("{}.csv", f.name));
        write_feature_csv(create(&path)?, &vectors)?;
        outputs.push(path);
    }
    let ex = out.join("exclusions.json");
    cohort.write_exclusions(create(&ex)?)?;
    outputs.push(ex);
    Ok(outputs)
}

pub const INFER_RESULTS: &str = "infer_results";
pub const INFER_SCORES: &str = "infer_scores";
pub const LINK_RESULTS: &str = "link_results";
pub const LINK_SCORES: &str = "link_scores";

fn run_infer(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let tasks = cfg.infer_tasks();
    if tasks.is_empty() {
        return Err(CliError::Usage("`infer` needs an [infer] section".into()));
    }
    let cohort = load_data(cfg)?;
    let mut results: Vec<TaskResult> = Vec::new();
    let mut scores: Vec<UnitScore> = Vec::new();
    for task in &tasks {
        info!("{task}");
        let report = attrinf::run_task(task, &cohort, true)?;
        results.extend(report.results);
        scores.extend(report.scores);
    }
    let sfx = free_suffix(out, &[(INFER_RESULTS, "json"), (INFER_SCORES, "csv")]);
    let rpath = out.join(format!("{INFER_RESULTS}{sfx}.json"));
    let spath = out.join(format!("{INFER_SCORES}{sfx}.csv"));
    write_json(&rpath, &results)?;
    attrinf::write_unit_scores(create(&spath)?, &scores)?;
    Ok(vec![rpath, spath])
}

fn run_link(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let Some(task) = cfg.link_task() else {
        return Err(CliError::Usage("`link` needs a [link] section".into()));
    };
    let cohort = load_data(cfg)?;
    let report = linkage::run_link(&task, &cohort, true)?;
    let results: Vec<LinkResult> = report.results;
    let sfx = free_suffix(out, &[(LINK_RESULTS, "json"), (LINK_SCORES, "csv")]);
    let rpath = out.join(format!("{LINK_RESULTS}{sfx}.json"));
    let spath = out.join(format!("{LINK_SCORES}{sfx}.csv"));
    write_json(&rpath, &results)?;
    linkage::write_pair_scores(create(&spath)?, &report.scores)?;
    Ok(vec![rpath, spath])
}
