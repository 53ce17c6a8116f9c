//! Experiment configuration file.
//!
//! ```toml
//! seed = 7
//!
//! [synth]              # or: [data] steps = "...", attributes = "..."
//! n_users = 200
//!
//! [presets.my_cell]
//! scope = "day"
//! method = "statistical"
//! stats = ["max"]
//! window = 240
//!
//! [features]
//! configs = ["stat_max_median_w720", "my_cell"]
//!
//! [infer]
//! attributes = ["age", "gender"]
//! features = ["stat_max_median_w720"]
//! classifiers = ["logreg", "mlp_small"]
//!
//! [link]
//! features = ["dist_b2_w720"]
//! attacks = ["euclidean", "dense_siamese"]
//!
//! [model]
//! epochs = 50
//! ```
//!
//! Validation walks every section and reports all problems at once.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use stepleak::attrinf::{self, Aggregation, TaskSpec};
use stepleak::cohort::{Attribute, DEFAULT_AGE_THRESHOLD};
use stepleak::features::FeatureConfig;
use stepleak::learners::{ModelKind, ModelSpec};
use stepleak::linkage::{Attack, LinkTask};
use stepleak::synth::SynthConfig;
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Unreadable { path: PathBuf, source: std::io::Error },
    Invalid(Vec<Diagnostic>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Unreadable { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            ConfigError::Invalid(d) => {
                write!(f, "invalid config ({} problems)", d.len())?;
                for x in d {
                    write!(f, "\n  {x}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum DataSource {
    Files { steps: PathBuf, attributes: PathBuf },
    Synth(SynthConfig),
}

/// A feature config together with the name it was referenced by.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedFeature {
    pub name: String,
    pub config: FeatureConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferSection {
    pub attributes: Vec<Attribute>,
    pub features: Vec<NamedFeature>,
    pub classifiers: Vec<ModelKind>,
    pub cv_folds: usize,
    pub split_fraction: f64,
    pub aggregation: Aggregation,
    pub raw_action_len: usize,
    pub permute_labels: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkSection {
    pub features: Vec<NamedFeature>,
    pub attacks: Vec<Attack>,
    pub cv_folds: usize,
    pub permute_labels: bool,
}

/// Hyperparameters applied to every trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub dropout: Option<f64>,
    pub l2: Option<f64>,
    pub n_trees: Option<usize>,
    pub max_depth: Option<usize>,
}

impl ModelSection {
    pub fn spec(&self, kind: ModelKind, seed: u64) -> ModelSpec {
        let mut s = ModelSpec::new(kind).with_seed(seed);
        if let Some(v) = self.epochs {
            s.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            s.train.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            s.train.batch_size = v;
        }
        if let Some(v) = self.dropout {
            s.dropout = v;
        }
        if let Some(v) = self.l2 {
            s.l2 = v;
        }
        if let Some(v) = self.n_trees {
            s.forest.n_trees = v;
        }
        s.forest.max_depth = self.max_depth.or(s.forest.max_depth);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub age_threshold: u32,
    pub source: DataSource,
    pub out: Option<PathBuf>,
    pub presets: BTreeMap<String, FeatureConfig>,
    pub features: Vec<NamedFeature>,
    pub infer: Option<InferSection>,
    pub link: Option<LinkSection>,
    pub model: ModelSection,
    /// `seed` of `[synth]` was given explicitly and is not tied to the global seed.
    pub synth_seed_pinned: bool,
}

impl ExperimentConfig {
    /// Replaces the global seed (and the synth seed unless pinned).
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let DataSource::Synth(s) = &mut self.source {
            if !self.synth_seed_pinned {
                s.seed = seed;
            }
        }
    }

    pub fn infer_tasks(&self) -> Vec<TaskSpec> {
        let Some(inf) = &self.infer else {
            return Vec::new();
        };
        inf.attributes
            .iter()
            .map(|&attribute| TaskSpec {
                attribute,
                features: inf.features.iter().map(|f| f.config.clone()).collect(),
                classifiers: inf.classifiers.iter().map(|&k| self.model.spec(k, self.seed)).collect(),
                split_fraction: inf.split_fraction,
                cv_folds: inf.cv_folds,
                seed: self.seed,
                aggregation: inf.aggregation,
                raw_action_len: inf.raw_action_len,
                permute_labels: inf.permute_labels,
            })
            .collect()
    }

    pub fn link_task(&self) -> Option<LinkTask> {
        self.link.as_ref().map(|l| LinkTask {
            features: l.features.iter().map(|f| f.config.clone()).collect(),
            attacks: l.attacks.clone(),
            model: self.model.spec(ModelKind::SiameseDense, self.seed),
            cv_folds: l.cv_folds,
            seed: self.seed,
            permute_labels: l.permute_labels,
        })
    }
}

const TOP_LEVEL: [&str; 10] = [
    "seed", "age_threshold", "out", "data", "synth", "presets", "features", "infer", "link", "model",
];

/// Reads and validates a config file. Relative data paths resolve against
/// the file's directory.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base).map_err(ConfigError::Invalid)
}

struct Checker {
    diags: Vec<Diagnostic>,
}

impl Checker {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.diags.push(Diagnostic::new(field, message));
    }

    fn uint(&mut self, t: &Table, section: &str, key: &str, min: i64) -> Option<u64> {
        let v = t.get(key)?;
        match v.as_integer() {
            Some(i) if i >= min => Some(i as u64),
            Some(i) => {
                self.push(format!("{section}{key}"), format!("must be >= {min}, got {i}"));
                None
            }
            None => {
                self.push(format!("{section}{key}"), format!("expected an integer, got {}", v.type_str()));
                None
            }
        }
    }

    fn float(&mut self, t: &Table, section: &str, key: &str) -> Option<f64> {
        let v = t.get(key)?;
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.push(format!("{section}{key}"), format!("expected a number, got {}", v.type_str()));
                None
            }
        }
    }

    fn boolean(&mut self, t: &Table, section: &str, key: &str) -> Option<bool> {
        let v = t.get(key)?;
        match v.as_bool() {
            Some(b) => Some(b),
            None => {
                self.push(format!("{section}{key}"), format!("expected a boolean, got {}", v.type_str()));
                None
            }
        }
    }

    fn strings(&mut self, t: &Table, section: &str, key: &str) -> Option<Vec<String>> {
        let v = t.get(key)?;
        let Some(arr) = v.as_array() else {
            self.push(format!("{section}{key}"), "expected an array of strings");
            return None;
        };
        let mut out = Vec::new();
        for (i, x) in arr.iter().enumerate() {
            match x.as_str() {
                Some(s) => out.push(s.to_string()),
                None => self.push(format!("{section}{key}[{i}]"), "expected a string"),
            }
        }
        Some(out)
    }

    fn unknown_keys(&mut self, t: &Table, section: &str, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.push(format!("{section}{k}"), "unknown field");
            }
        }
    }

    fn table<'a>(&mut self, root: &'a Table, key: &str) -> Option<&'a Table> {
        let v = root.get(key)?;
        match v.as_table() {
            Some(t) => Some(t),
            None => {
                self.push(key, format!("expected a table, got {}", v.type_str()));
                None
            }
        }
    }

    fn parse_list<T: FromStr>(&mut self, names: &[String], field: &str) -> Vec<T>
    where
        T::Err: fmt::Display,
    {
        let mut out = Vec::new();
        for (i, n) in names.iter().enumerate() {
            match n.parse::<T>() {
                Ok(v) => out.push(v),
                Err(e) => self.push(format!("{field}[{i}]"), e.to_string()),
            }
        }
        out
    }

    fn resolve_features(
        &mut self,
        names: &[String],
        field: &str,
        presets: &BTreeMap<String, FeatureConfig>,
    ) -> Vec<NamedFeature> {
        let mut out = Vec::new();
        for (i, n) in names.iter().enumerate() {
            let config = presets.get(n).cloned().or_else(|| attrinf::preset(n));
            match config {
                Some(config) => out.push(NamedFeature { name: n.clone(), config }),
                None => self.push(format!("{field}[{i}]"), format!("unknown preset {n:?}")),
            }
        }
        out
    }
}

fn check_preset_numbers(c: &mut Checker, name: &str, t: &Table) {
    let section = format!("presets.{name}.");
    for key in ["window", "bucket"] {
        if let Some(v) = t.get(key) {
            match v.as_integer() {
                Some(i) if i >= 1 => {}
                _ => c.push(format!("{section}{key}"), format!("must be a positive integer, got {v}")),
            }
        }
    }
}

/// Parses config text; on failure returns every diagnostic found.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let root: Table = match text.parse() {
        Ok(t) => t,
        Err(e) => return Err(vec![Diagnostic::new("", format!("TOML syntax: {e}"))]),
    };
    let mut c = Checker { diags: Vec::new() };
    c.unknown_keys(&root, "", &TOP_LEVEL);

    let seed = c.uint(&root, "", "seed", 0).unwrap_or(0);
    let age_threshold = c
        .uint(&root, "", "age_threshold", 1)
        .map(|v| v as u32)
        .unwrap_or(DEFAULT_AGE_THRESHOLD);
    let out = match root.get("out") {
        Some(Value::String(s)) => Some(base.join(s)),
        Some(v) => {
            c.push("out", format!("expected a string, got {}", v.type_str()));
            None
        }
        None => None,
    };

    // data source
    let data = c.table(&root, "data");
    let synth = c.table(&root, "synth");
    let mut synth_seed_pinned = false;
    let source = match (data, synth) {
        (Some(_), Some(_)) => {
            c.push("", "exactly one data source is allowed; found both [data] and [synth]");
            None
        }
        (None, None) => {
            c.push("", "no data source: add a [data] or [synth] section");
            None
        }
        (Some(d), None) => {
            c.unknown_keys(d, "data.", &["steps", "attributes"]);
            let mut path = |key: &str| match d.get(key) {
                Some(Value::String(s)) => Some(base.join(s)),
                Some(v) => {
                    c.push(format!("data.{key}"), format!("expected a path string, got {}", v.type_str()));
                    None
                }
                None => {
                    c.push(format!("data.{key}"), "missing");
                    None
                }
            };
            let steps = path("steps");
            let attributes = path("attributes");
            steps.zip(attributes).map(|(steps, attributes)| DataSource::Files { steps, attributes })
        }
        (None, Some(s)) => {
            synth_seed_pinned = s.contains_key("seed");
            if let Some(n) = s.get("n_users").and_then(Value::as_integer) {
                if n < 1 {
                    c.push("synth.n_users", format!("must be >= 1, got {n}"));
                }
            }
            match Value::Table(s.clone()).try_into::<SynthConfig>() {
                Ok(mut cfg) => {
                    if !synth_seed_pinned {
                        cfg.seed = seed;
                    }
                    if let Err(e) = cfg.validate() {
                        c.push("synth", e.to_string());
                    }
                    Some(DataSource::Synth(cfg))
                }
                Err(e) => {
                    c.push("synth", e.message().to_string());
                    None
                }
            }
        }
    };

    // user presets
    let mut presets = BTreeMap::new();
    if let Some(p) = c.table(&root, "presets") {
        for (name, v) in p {
            let field = format!("presets.{name}");
            if attrinf::preset(name).is_some() {
                c.push(field, "collides with a built-in preset of the same name");
                continue;
            }
            let Some(t) = v.as_table() else {
                c.push(field, "expected a table");
                continue;
            };
            check_preset_numbers(&mut c, name, t);
            match v.clone().try_into::<FeatureConfig>() {
                Ok(cfg) => match cfg.validate() {
                    Ok(()) => {
                        presets.insert(name.clone(), cfg);
                    }
                    Err(e) => c.push(field, e.to_string()),
                },
                Err(e) => {
                    if !c.diags.iter().any(|d| d.field.starts_with(&format!("{field}."))) {
                        c.push(field, e.message().to_string());
                    }
                }
            }
        }
    }

    let mut features = Vec::new();
    if let Some(f) = c.table(&root, "features") {
        c.unknown_keys(f, "features.", &["configs"]);
        if let Some(names) = c.strings(f, "features.", "configs") {
            features = c.resolve_features(&names, "features.configs", &presets);
        }
    }

    let infer = c.table(&root, "infer").map(|t| {
        let s = "infer.";
        c.unknown_keys(
            t,
            s,
            &[
                "attributes", "features", "classifiers", "cv_folds", "split_fraction", "aggregation",
                "raw_action_len", "permute_labels",
            ],
        );
        let attributes = match c.strings(t, s, "attributes") {
            Some(names) => c.parse_list::<Attribute>(&names, "infer.attributes"),
            None => Attribute::ALL.to_vec(),
        };
        let features = match c.strings(t, s, "features") {
            Some(names) if !names.is_empty() => c.resolve_features(&names, "infer.features", &presets),
            _ => {
                c.push("infer.features", "at least one feature preset is required");
                Vec::new()
            }
        };
        let classifiers = match c.strings(t, s, "classifiers") {
            Some(names) if !names.is_empty() => {
                let kinds = c.parse_list::<ModelKind>(&names, "infer.classifiers");
                for (i, k) in kinds.iter().enumerate() {
                    if !k.is_classifier() {
                        c.push(format!("infer.classifiers[{i}]"), format!("{k} is not a classifier"));
                    }
                }
                kinds
            }
            _ => {
                c.push("infer.classifiers", "at least one classifier is required");
                Vec::new()
            }
        };
        let cv_folds = c.uint(t, s, "cv_folds", 0).unwrap_or(5) as usize;
        let split_fraction = c.float(t, s, "split_fraction").unwrap_or(0.8);
        if !(split_fraction > 0.0 && split_fraction < 1.0) {
            c.push("infer.split_fraction", format!("must be in (0, 1), got {split_fraction}"));
        }
        let aggregation = match t.get("aggregation").map(|v| v.as_str().map(str::parse::<Aggregation>)) {
            None => Aggregation::Mean,
            Some(Some(Ok(a))) => a,
            Some(Some(Err(e))) => {
                c.push("infer.aggregation", e.to_string());
                Aggregation::Mean
            }
            Some(None) => {
                c.push("infer.aggregation", "expected a string");
                Aggregation::Mean
            }
        };
        let raw_action_len = c
            .uint(t, s, "raw_action_len", 1)
            .map_or(attrinf::DEFAULT_RAW_ACTION_LEN, |v| v as usize);
        let permute_labels = c.boolean(t, s, "permute_labels").unwrap_or(false);
        InferSection {
            attributes,
            features,
            classifiers,
            cv_folds,
            split_fraction,
            aggregation,
            raw_action_len,
            permute_labels,
        }
    });

    let link = c.table(&root, "link").map(|t| {
        let s = "link.";
        c.unknown_keys(t, s, &["features", "attacks", "cv_folds", "permute_labels"]);
        let features = match c.strings(t, s, "features") {
            Some(names) if !names.is_empty() => c.resolve_features(&names, "link.features", &presets),
            _ => {
                c.push("link.features", "at least one feature preset is required");
                Vec::new()
            }
        };
        for (i, f) in features.iter().enumerate() {
            if f.config.scope != stepleak::features::Scope::Day {
                c.push(format!("link.features[{i}]"), "linkability needs day-scope features");
            }
        }
        let attacks = match c.strings(t, s, "attacks") {
            Some(names) if !names.is_empty() => c.parse_list::<Attack>(&names, "link.attacks"),
            _ => {
                c.push("link.attacks", "at least one attack is required");
                Vec::new()
            }
        };
        let cv_folds = c.uint(t, s, "cv_folds", 0).unwrap_or(5) as usize;
        let permute_labels = c.boolean(t, s, "permute_labels").unwrap_or(false);
        LinkSection {
            features,
            attacks,
            cv_folds,
            permute_labels,
        }
    });

    let model = match c.table(&root, "model") {
        Some(t) => {
            let s = "model.";
            for key in ["epochs", "batch_size", "n_trees", "max_depth"] {
                c.uint(t, s, key, 1);
            }
            match Value::Table(t.clone()).try_into::<ModelSection>() {
                Ok(m) => {
                    let probe = m.spec(ModelKind::RandomForest, 0);
                    if let Err(e) = probe.validate() {
                        c.push("model", e.to_string());
                    }
                    m
                }
                Err(e) => {
                    if !c.diags.iter().any(|d| d.field.starts_with(s)) {
                        c.push("model", e.message().to_string());
                    }
                    ModelSection::default()
                }
            }
        }
        None => ModelSection::default(),
    };

    match source {
        Some(source) if c.diags.is_empty() => Ok(ExperimentConfig {
            seed,
            age_threshold,
            source,
            out,
            presets,
            features,
            infer,
            link,
            model,
            synth_seed_pinned,
        }),
        _ => Err(c.diags),
    }
}
