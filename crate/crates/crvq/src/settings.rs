//! Quantizer settings from a `key=value` file, command-line flags and the
//! `CRVQ_SEED` environment variable.
//!
//! ```text
//! # comment
//! d = 8
//! e = 8
//! codebooks = 4
//! lambda = 0.02
//! metric = wa
//! ```
//!
//! Flags override the file; the file overrides `CRVQ_SEED`; built-in defaults
//! fill the rest.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crvq_core::{ImportanceForm, ImportanceMetric, QuantConfig, ReorderScope};

/// Environment variable consulted when no seed is given.
pub const SEED_ENV: &str = "CRVQ_SEED";

/// Keys accepted in a settings file.
pub const KEYS: &[&str] = &[
    "d",
    "e",
    "codebooks",
    "lambda",
    "metric",
    "importance_form",
    "reorder",
    "seed",
    "epsilon",
    "beam_width",
    "max_iters",
    "finetune_steps",
    "learning_rate",
    "calib",
    "jobs",
];

/// Invalid settings.
#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    /// Unknown key in a settings file.
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    /// A line without `=`, or a key given twice.
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    /// A value that does not parse.
    #[error("bad value for {key}: {value:?}")]
    BadValue { key: String, value: String },
    /// The settings file could not be read.
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where calibration activations come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CalibSource {
    /// Gaussian `N x 4d` activations derived from the seed.
    #[default]
    Synthetic,
    /// One `N x O` matrix shared by every layer.
    File(PathBuf),
    /// A directory holding `<stem>.crvqt` per input layer.
    Dir(PathBuf),
}

impl CalibSource {
    /// `synthetic`, or a path (a directory selects per-layer files).
    pub fn parse(s: &str) -> Self {
        if s == "synthetic" {
            Self::Synthetic
        } else if Path::new(s).is_dir() {
            Self::Dir(s.into())
        } else {
            Self::File(s.into())
        }
    }
}

/// Parses `wa`, `wonly` or `random`.
pub fn parse_metric(s: &str) -> Option<ImportanceMetric> {
    match s.to_ascii_lowercase().as_str() {
        "wa" | "w-a" | "weight-activation" => Some(ImportanceMetric::WeightActivation),
        "wonly" | "w-only" | "weight-only" => Some(ImportanceMetric::WeightOnly),
        "random" => Some(ImportanceMetric::Random),
        _ => None,
    }
}

/// Short name used in CSV and JSON output.
pub fn metric_name(m: ImportanceMetric) -> &'static str {
    match m {
        ImportanceMetric::WeightActivation => "wa",
        ImportanceMetric::WeightOnly => "wonly",
        ImportanceMetric::Random => "random",
    }
}

fn parse_form(s: &str) -> Option<ImportanceForm> {
    match s {
        "direct" => Some(ImportanceForm::Direct),
        "inverse" | "inverse-hessian" => Some(ImportanceForm::InverseHessian),
        _ => None,
    }
}

fn parse_reorder(s: &str) -> Option<ReorderScope> {
    match s {
        "all" => Some(ReorderScope::All),
        "important-first" | "important_first" => Some(ReorderScope::ImportantFirst),
        _ => None,
    }
}

/// Partial settings; `None` means "not given here".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub d: Option<usize>,
    pub e: Option<u32>,
    pub codebooks: Option<usize>,
    pub lambda: Option<f64>,
    pub metric: Option<ImportanceMetric>,
    pub importance_form: Option<ImportanceForm>,
    pub reorder: Option<ReorderScope>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub beam_width: Option<usize>,
    pub max_iters: Option<usize>,
    pub finetune_steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub calib: Option<CalibSource>,
    pub jobs: Option<usize>,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, SettingsError> {
    raw.parse().map_err(|_| SettingsError::BadValue { key: key.into(), value: raw.into() })
}

impl Settings {
    /// Parses settings text. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, SettingsError> {
        let mut s = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(SettingsError::Syntax { line: line_no, msg: format!("expected key=value, got {line:?}") });
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(SettingsError::UnknownKey { line: line_no, key: k.into() });
            }
            if seen.contains(&k) {
                return Err(SettingsError::Syntax { line: line_no, msg: format!("duplicate key {k:?}") });
            }
            seen.push(k);
            s.set(k, v)?;
        }
        Ok(s)
    }

    /// Reads and parses a settings file.
    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SettingsError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), SettingsError> {
        let bad = || SettingsError::BadValue { key: key.into(), value: v.into() };
        match key {
            "d" => self.d = Some(value(key, v)?),
            "e" => self.e = Some(value(key, v)?),
            "codebooks" => self.codebooks = Some(value(key, v)?),
            "lambda" => self.lambda = Some(value(key, v)?),
            "metric" => self.metric = Some(parse_metric(v).ok_or_else(bad)?),
            "importance_form" => self.importance_form = Some(parse_form(v).ok_or_else(bad)?),
            "reorder" => self.reorder = Some(parse_reorder(v).ok_or_else(bad)?),
            "seed" => self.seed = Some(value(key, v)?),
            "epsilon" => self.epsilon = Some(value(key, v)?),
            "beam_width" => self.beam_width = Some(value(key, v)?),
            "max_iters" => self.max_iters = Some(value(key, v)?),
            "finetune_steps" => self.finetune_steps = Some(value(key, v)?),
            "learning_rate" => self.learning_rate = Some(value(key, v)?),
            "calib" => self.calib = Some(CalibSource::parse(v)),
            "jobs" => self.jobs = Some(value(key, v)?),
            _ => unreachable!("key list checked"),
        }
        Ok(())
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overridden_by(self, over: Settings) -> Settings {
        Settings {
            d: over.d.or(self.d),
            e: over.e.or(self.e),
            codebooks: over.codebooks.or(self.codebooks),
            lambda: over.lambda.or(self.lambda),
            metric: over.metric.or(self.metric),
            importance_form: over.importance_form.or(self.importance_form),
            reorder: over.reorder.or(self.reorder),
            seed: over.seed.or(self.seed),
            epsilon: over.epsilon.or(self.epsilon),
            beam_width: over.beam_width.or(self.beam_width),
            max_iters: over.max_iters.or(self.max_iters),
            finetune_steps: over.finetune_steps.or(self.finetune_steps),
            learning_rate: over.learning_rate.or(self.learning_rate),
            calib: over.calib.or(self.calib),
            jobs: over.jobs.or(self.jobs),
        }
    }

    /// Seed from the settings, else from `env_seed` (the raw `CRVQ_SEED`
    /// value), else 0.
    pub fn resolve_seed(&self, env_seed: Option<&str>) -> Result<u64, SettingsError> {
        match (self.seed, env_seed) {
            (Some(s), _) => Ok(s),
            (None, Some(raw)) => value(SEED_ENV, raw.trim()),
            (None, None) => Ok(0),
        }
    }

    /// Full quantizer config; unset fields take defaults. Range checks are
    /// left to [`QuantConfig::validate`].
    pub fn to_config(&self, env_seed: Option<&str>) -> Result<QuantConfig, SettingsError> {
        let mut cfg = QuantConfig::default();
        cfg.seed = self.resolve_seed(env_seed)?;
        if let Some(v) = self.d {
            cfg.vector_dim = v;
        }
        if let Some(v) = self.e {
            cfg.code_bits = v;
        }
        if let Some(v) = self.codebooks {
            cfg.num_codebooks = v;
        }
        if let Some(v) = self.lambda {
            cfg.important_ratio = v;
        }
        if let Some(v) = self.metric {
            cfg.metric = v;
        }
        if let Some(v) = self.importance_form {
            cfg.importance_form = v;
        }
        if let Some(v) = self.reorder {
            cfg.reorder = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.beam_width {
            cfg.beam_width = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_outer_iters = v;
        }
        if let Some(v) = self.finetune_steps {
            cfg.finetune.steps = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.finetune.learning_rate = v;
        }
        Ok(cfg)
    }
}
