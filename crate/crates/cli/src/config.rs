//! Run configuration: a TOML file, optionally overridden by command-line flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use alloy_repair::llm::{ModelProfile, DEFAULT_ENDPOINT};
use alloy_repair::orchestrator::{FeedbackLevel, Setting, DEFAULT_BUDGET};
use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_RUNNER_TIMEOUT_SECS: u64 = 60;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("unknown model `{0}` (known: gpt-3.5-turbo, gpt-4-32k, gpt-4-turbo)")]
    UnknownModel(String),
    #[error("unknown feedback level `{0}` (use NoFeedback, GenericFeedback or AutoFeedback)")]
    UnknownFeedback(String),
    #[error("setting id `{0}` is used twice")]
    DuplicateSetting(String),
    #[error("no setting named `{0}`")]
    NoSuchSetting(String),
    #[error("backend must be `live` or `scripted:<path>`, got `{0}`")]
    Backend(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendMode {
    Live,
    /// A `.jsonl` program replayed for every session, or a directory of them.
    Scripted(PathBuf),
}

impl FromStr for BackendMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "live" => Ok(BackendMode::Live),
            Some(("scripted", path)) if !path.is_empty() => Ok(BackendMode::Scripted(PathBuf::from(path))),
            _ => Err(ConfigError::Backend(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSpec {
    pub id: String,
    pub model: String,
    pub feedback: String,
    pub budget: Option<u32>,
    pub temperature: Option<f64>,
    /// Prompt-agent model for auto-feedback; defaults to `model`.
    pub prompt_model: Option<String>,
}

impl SettingSpec {
    pub fn resolve(&self) -> Result<Setting, ConfigError> {
        let profile = |name: &str| {
            let p = ModelProfile::builtin(name).ok_or_else(|| ConfigError::UnknownModel(name.to_string()))?;
            Ok::<_, ConfigError>(match self.temperature {
                Some(t) => p.with_temperature(t),
                None => p,
            })
        };
        let level =
            FeedbackLevel::parse(&self.feedback).ok_or_else(|| ConfigError::UnknownFeedback(self.feedback.clone()))?;
        let mut setting = Setting::new(&self.id, profile(&self.model)?, level, self.budget.unwrap_or(DEFAULT_BUDGET));
        if level == FeedbackLevel::AutoFeedback {
            if let Some(pm) = &self.prompt_model {
                setting.prompt_profile = Some(profile(pm)?);
            }
        }
        setting.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(setting)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    suite: Option<PathBuf>,
    backend: Option<String>,
    runner: Option<String>,
    runner_timeout_secs: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    endpoint: Option<String>,
    #[serde(default)]
    settings: Vec<SettingSpec>,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub suite: Option<PathBuf>,
    pub settings: Vec<String>,
    pub budget: Option<u32>,
    pub temperature: Option<f64>,
    pub backend: Option<BackendMode>,
    pub runner: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub suite: Option<PathBuf>,
    pub settings: Vec<Setting>,
    pub backend: BackendMode,
    pub runner: Option<String>,
    pub runner_timeout_secs: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub endpoint: String,
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides`, and validates the result.
    /// Without a settings list the six GPT-4 settings are used.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                toml::from_str(&text).map_err(|source| ConfigError::Toml { path: p.to_path_buf(), source })?
            }
            None => FileConfig::default(),
        };
        Self::build(file, overrides)
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, ConfigError> {
        let file =
            toml::from_str(text).map_err(|source| ConfigError::Toml { path: PathBuf::from("<inline>"), source })?;
        Self::build(file, overrides)
    }

    fn build(file: FileConfig, o: &Overrides) -> Result<Self, ConfigError> {
        let mut settings = if file.settings.is_empty() {
            Setting::paper_matrix(DEFAULT_BUDGET)
        } else {
            file.settings.iter().map(SettingSpec::resolve).collect::<Result<Vec<_>, _>>()?
        };
        let mut seen = BTreeSet::new();
        for s in &settings {
            if !seen.insert(s.id.clone()) {
                return Err(ConfigError::DuplicateSetting(s.id.clone()));
            }
        }
        for wanted in &o.settings {
            if !seen.contains(wanted) {
                return Err(ConfigError::NoSuchSetting(wanted.clone()));
            }
        }
        if !o.settings.is_empty() {
            settings.retain(|s| o.settings.contains(&s.id));
        }
        for s in &mut settings {
            if let Some(b) = o.budget {
                s.budget = b;
            }
            if let Some(t) = o.temperature {
                s.repair_profile.temperature = t;
                if let Some(p) = &mut s.prompt_profile {
                    p.temperature = t;
                }
            }
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }

        let backend = match (&o.backend, &file.backend) {
            (Some(b), _) => b.clone(),
            (None, Some(b)) => b.parse()?,
            (None, None) => BackendMode::Live,
        };
        let workers = o.workers.or(file.workers).unwrap_or(DEFAULT_WORKERS);
        if workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        Ok(Self {
            suite: o.suite.clone().or(file.suite),
            settings,
            backend,
            runner: o.runner.clone().or(file.runner),
            runner_timeout_secs: file.runner_timeout_secs.unwrap_or(DEFAULT_RUNNER_TIMEOUT_SECS),
            workers,
            out: o.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            endpoint: file.endpoint.unwrap_or_else(|| DEFAULT_ENDPOINT.to_string()),
        })
    }

    pub fn setting(&self, id: &str) -> Result<&Setting, ConfigError> {
        self.settings.iter().find(|s| s.id == id).ok_or_else(|| ConfigError::NoSuchSetting(id.to_string()))
    }
}
