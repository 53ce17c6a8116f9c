//! Aggregates raw results into `<out>/report/`: one summary table, ROC
//! curves from score dumps, and a 2-D PCA projection of per-user features.
//! Raw result files are only read.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stepleak::attrinf::{self, TaskResult, UnitScore};
use stepleak::cohort::{Attribute, Cohort};
use stepleak::eval::{self, ScoredSample};
use stepleak::features::extract_user;
use stepleak::linkage::{LinkResult, PairScore};

use crate::config::{ExperimentConfig, NamedFeature};
use crate::run::{create, io_err, CliResult, INFER_RESULTS, INFER_SCORES, LINK_RESULTS, LINK_SCORES};

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub source: String,
    pub task: String,
    pub attribute: String,
    pub config: String,
    pub model: String,
    pub folds: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Files in `dir` named `<stem>.<ext>` or `<stem>.<n>.<ext>`, sorted by name.
pub fn result_files(dir: &Path, stem: &str, ext: &str) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(mid) = name.strip_prefix(stem).and_then(|r| r.strip_suffix(&format!(".{ext}"))) else {
            continue;
        };
        if mid.is_empty() || mid.strip_prefix('.').is_some_and(|n| n.parse::<u32>().is_ok()) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text).map_err(stepleak::Error::from)?)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Summary rows of every result file in `dir`, infer files first.
pub fn summarize(dir: &Path) -> CliResult<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for path in result_files(dir, INFER_RESULTS, "json")? {
        let results: Vec<TaskResult> = read_json(&path)?;
        rows.extend(results.into_iter().map(|r| SummaryRow {
            source: file_name(&path),
            task: "infer".into(),
            attribute: r.attribute.to_string(),
            config: r.config,
            model: r.classifier.to_string(),
            folds: r.fold_aucs.len(),
            mean_auc: r.mean_auc,
            std_auc: r.std_auc,
            n_train: r.n_train,
            n_test: r.n_test,
        }));
    }
    for path in result_files(dir, LINK_RESULTS, "json")? {
        let results: Vec<LinkResult> = read_json(&path)?;
        rows.extend(results.into_iter().map(|r| SummaryRow {
            source: file_name(&path),
            task: "link".into(),
            attribute: String::new(),
            config: r.config,
            model: r.attack.to_string(),
            folds: r.fold_aucs.len(),
            mean_auc: r.mean_auc,
            std_auc: r.std_auc,
            n_train: r.n_train,
            n_test: r.n_test,
        }));
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(stepleak::Error::from)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(stepleak::Error::from)?;
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>().map_err(stepleak::Error::from)?;
    Ok(rows)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '+' { c } else { '_' })
        .collect()
}

fn write_roc(dir: &Path, name: String, samples: &[ScoredSample]) -> CliResult<Option<PathBuf>> {
    let curve = match eval::roc_curve(samples) {
        Ok(c) => c,
        Err(stepleak::Error::SingleClass) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let path = dir.join(format!("roc_{}.csv", sanitize(&name)));
    curve.write_csv(create(&path)?)?;
    Ok(Some(path))
}

fn roc_files(out: &Path, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    for path in result_files(out, INFER_SCORES, "csv")? {
        let stem = file_name(&path).trim_end_matches(".csv").to_string();
        let mut groups: BTreeMap<(String, String, String), Vec<ScoredSample>> = BTreeMap::new();
        for s in read_rows::<UnitScore>(&path)? {
            groups
                .entry((s.attribute.to_string(), s.config, s.classifier.to_string()))
                .or_default()
                .push(ScoredSample::new(s.score, s.label));
        }
        for ((a, c, m), samples) in groups {
            written.extend(write_roc(dir, format!("{stem}_{a}_{c}_{m}"), &samples)?);
        }
    }
    for path in result_files(out, LINK_SCORES, "csv")? {
        let stem = file_name(&path).trim_end_matches(".csv").to_string();
        let mut groups: BTreeMap<(String, String), Vec<ScoredSample>> = BTreeMap::new();
        for s in read_rows::<PairScore>(&path)? {
            groups
                .entry((s.config, s.attack.to_string()))
                .or_default()
                .push(ScoredSample::new(s.score, s.label));
        }
        for ((c, a), samples) in groups {
            written.extend(write_roc(dir, format!("{stem}_{c}_{a}"), &samples)?);
        }
    }
    Ok(written)
}

fn pca_feature(cfg: &ExperimentConfig) -> NamedFeature {
    cfg.features
        .first()
        .or_else(|| cfg.infer.as_ref().and_then(|i| i.features.first()))
        .cloned()
        .unwrap_or_else(|| NamedFeature {
            name: "stat_max_median_w720".into(),
            config: attrinf::preset("stat_max_median_w720").expect("built-in preset"),
        })
}

/// Per-user mean feature vector projected on two principal components,
/// labelled with the age class.
fn pca_file(cfg: &ExperimentConfig, cohort: &Cohort, dir: &Path) -> CliResult<Option<PathBuf>> {
    let feature = pca_feature(cfg);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for r in &cohort.records {
        let vs = extract_user(r, &feature.config, cohort.stats.max_steps)?;
        let Some(first) = vs.first() else { continue };
        if vs.iter().any(|v| v.values.len() != first.values.len()) {
            continue;
        }
        let mut mean = vec![0.0; first.values.len()];
        for v in &vs {
            mean.iter_mut().zip(&v.values).for_each(|(m, x)| *m += x / vs.len() as f64);
        }
        ids.push(r.user_id().to_string());
        rows.push(mean);
        labels.push(r.labels.binary(Attribute::Age).unwrap_or(0));
    }
    if rows.len() < 3 || rows[0].len() < 2 {
        return Ok(None);
    }
    let pca = eval::pca_project(&rows, 2)?;
    let path = dir.join(format!("pca_{}.csv", sanitize(&feature.name)));
    eval::write_pca_csv(create(&path)?, &ids, &pca, &labels)?;
    Ok(Some(path))
}

pub fn run_report(cfg: &ExperimentConfig, cohort: &Cohort, out: &Path) -> CliResult<Vec<PathBuf>> {
    let dir = out.join("report");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let rows = summarize(out)?;
    let summary = dir.join("summary.csv");
    write_rows(&summary, &rows)?;
    let mut written = vec![summary];
    written.extend(roc_files(out, &dir)?);
    written.extend(pca_file(cfg, cohort, &dir)?);
    Ok(written)
}
