//! Run configuration: TOML file, then `STEREO_*` environment variables, then
//! command-line flags, later sources winning.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use stereo_core::tools::DecisionRule;
use thiserror::Error;

use crate::http::Endpoint;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("conflicting backend selections: {0}")]
    ConflictingBackends(String),
    #[error("{role} backend is live but has no URL")]
    MissingUrl { role: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Synthetic,
    Live,
}

/// Per-role section, e.g. `[chat]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleFile {
    pub backend: Option<BackendKind>,
    pub url: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<u32>,
}

/// Knobs of the in-process simulated backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Per-subgroup accuracy of the simulated classifier; 1.0 is an oracle.
    pub classifier_accuracy: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classifier_accuracy: 0.8,
        }
    }
}

/// The config file as written by users.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<BackendKind>,
    pub store: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub rule: Option<String>,
    pub out: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub max_steps: Option<usize>,
    pub token: Option<String>,
    #[serde(default)]
    pub chat: RoleFile,
    #[serde(default)]
    pub generate: RoleFile,
    #[serde(default)]
    pub classify: RoleFile,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Every `--backend` occurrence; more than one distinct value is an error.
    pub backend: Vec<BackendKind>,
    pub store: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub rule: Option<String>,
    pub out: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub chat_url: Option<String>,
    pub generate_url: Option<String>,
    pub classify_url: Option<String>,
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum RoleSelection {
    Synthetic,
    Live { url: String, timeout_secs: u64, retries: u32 },
}

impl RoleSelection {
    pub fn endpoint(&self, token: Option<&str>) -> Option<Endpoint> {
        match self {
            RoleSelection::Synthetic => None,
            RoleSelection::Live { url, timeout_secs, retries } => {
                let mut e = Endpoint::new(url.clone());
                e.timeout = Duration::from_secs(*timeout_secs);
                e.retries = *retries;
                e.token = token.map(str::to_string);
                Some(e)
            }
        }
    }
}

/// The resolved configuration of one run. Serialized into the manifest, so
/// it holds no secrets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub chat: RoleSelection,
    pub generate: RoleSelection,
    pub classify: RoleSelection,
    pub store: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub rule: DecisionRule,
    pub out: PathBuf,
    pub concurrency: usize,
    pub max_steps: usize,
    pub synthetic: SyntheticConfig,
    #[serde(skip)]
    pub token: Option<String>,
}

impl RunConfig {
    pub fn synthetic_default() -> Self {
        resolve(FileConfig::default(), Overrides::default()).expect("defaults are valid")
    }

    pub fn all_synthetic(&self) -> bool {
        [&self.chat, &self.generate, &self.classify]
            .iter()
            .all(|r| matches!(r, RoleSelection::Synthetic))
    }
}

pub const DEFAULT_N: usize = 10;
pub const DEFAULT_OUT: &str = "out";

pub fn rule_spec(rule: &DecisionRule) -> String {
    match *rule {
        DecisionRule::FixedThreshold { threshold, .. } => format!("threshold:{threshold}"),
        DecisionRule::BinomialTest { alpha, .. } => format!("binomial:{alpha}"),
    }
}

fn role(
    name: &'static str,
    file: &RoleFile,
    forced: Option<BackendKind>,
    global: BackendKind,
    url_override: Option<String>,
) -> Result<RoleSelection, ConfigError> {
    match forced.or(file.backend).unwrap_or(global) {
        BackendKind::Synthetic => Ok(RoleSelection::Synthetic),
        BackendKind::Live => {
            let url = url_override
                .or_else(|| file.url.clone())
                .ok_or(ConfigError::MissingUrl { role: name })?;
            Ok(RoleSelection::Live {
                url,
                timeout_secs: file.timeout_secs.unwrap_or(120),
                retries: file.retries.unwrap_or(2),
            })
        }
    }
}

pub fn resolve(file: FileConfig, over: Overrides) -> Result<RunConfig, ConfigError> {
    let mut kinds = over.backend.clone();
    kinds.sort_by_key(|k| *k as u8);
    kinds.dedup();
    if kinds.len() > 1 {
        return Err(ConfigError::ConflictingBackends(
            "both synthetic and live were selected".to_string(),
        ));
    }
    // A command-line backend applies to every role and beats per-role
    // settings from the file.
    let forced = kinds.first().copied();
    let global = forced.or(file.backend).unwrap_or(BackendKind::Synthetic);
    let rule = match over.rule.as_ref().or(file.rule.as_ref()) {
        Some(spec) => DecisionRule::parse(spec).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        None => DecisionRule::default(),
    };
    let n = over.n.or(file.n).unwrap_or(DEFAULT_N);
    if n == 0 {
        return Err(ConfigError::Invalid("n must be positive".into()));
    }
    let accuracy = file.synthetic.classifier_accuracy;
    if !(accuracy > 0.0 && accuracy <= 1.0) {
        return Err(ConfigError::Invalid(format!("classifier_accuracy {accuracy} must lie in (0, 1]")));
    }
    Ok(RunConfig {
        chat: role("chat", &file.chat, forced, global, over.chat_url)?,
        generate: role("generate", &file.generate, forced, global, over.generate_url)?,
        classify: role("classify", &file.classify, forced, global, over.classify_url)?,
        store: over.store.or(file.store),
        n,
        seed: over.seed.or(file.seed).unwrap_or(0),
        rule,
        out: over.out.or(file.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        concurrency: over.concurrency.or(file.concurrency).unwrap_or(4).max(1),
        max_steps: file.max_steps.unwrap_or(12),
        synthetic: file.synthetic,
        token: over.token.or(file.token),
    })
}
