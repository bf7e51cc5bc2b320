//! Backend configuration: per-service connection settings and named
//! profiles read from a TOML file.
//!
//! ```toml
//! output_root = "runs"
//!
//! [profiles.mock]
//! text = { kind = "mock", script = "story.json" }
//! image = { kind = "mock" }
//! video = { kind = "mock", frames = 5 }
//!
//! [profiles.remote]
//! matcher = "llm"
//! text = { kind = "http", endpoint = "https://llm.example/v1/generate", model = "planner", api_key_env = "LLM_API_KEY" }
//! image = { kind = "http", endpoint = "https://img.example/v1/images", model = "keyframes", api_key_env = "IMG_API_KEY" }
//! video = { kind = "http", endpoint = "http://localhost:9000/i2v", model = "i2v", timeout_secs = 900 }
//! ```
//!
//! Secrets are never stored in the file; `api_key_env` names the
//! environment variable to read at startup.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backends, HttpImage, HttpText, HttpVideo, MockImage, MockText, MockVideo};

pub const DEFAULT_FRAMES_PER_SHOT: usize = 5;
pub const MOCK_PROFILE: &str = "mock";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] io::Error),
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    2
}
fn default_auth_header() -> String {
    "Authorization".into()
}
fn default_auth_scheme() -> String {
    "Bearer".into()
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Prefix placed before the key in the auth header; empty for none.
    #[serde(default = "default_auth_scheme")]
    pub auth_scheme: String,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            api_key_env: None,
            auth_header: default_auth_header(),
            auth_scheme: default_auth_scheme(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.endpoint.trim().is_empty() {
            return Err(ConfigError::Invalid("endpoint is empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(ConfigError::Invalid("model is empty".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "timeout_secs must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(())
    }

    /// Reads the API key from the configured environment variable.
    pub fn api_key(&self) -> Result<Option<String>, ConfigError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => match env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(ConfigError::Invalid(format!(
                    "environment variable {var} is not set"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Mock {
        /// Mock text script (`{"queue": ...}` or `{"rules": ...}`).
        #[serde(default)]
        script: Option<PathBuf>,
        /// Frames per shot for the mock video backend.
        #[serde(default)]
        frames: Option<usize>,
    },
    Http(BackendConfig),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock {
            script: None,
            frames: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    #[default]
    Exact,
    Llm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    #[serde(default)]
    pub text: BackendSpec,
    #[serde(default)]
    pub image: BackendSpec,
    #[serde(default)]
    pub video: BackendSpec,
    #[serde(default)]
    pub matcher: MatcherKind,
}

impl Profile {
    pub fn is_mock(&self) -> bool {
        [&self.text, &self.image, &self.video]
            .iter()
            .all(|s| matches!(s, BackendSpec::Mock { .. }))
    }

    /// Frame count the video mock will emit, if the video backend is a mock.
    pub fn mock_frames(&self) -> Option<usize> {
        match &self.video {
            BackendSpec::Mock { frames, .. } => Some(frames.unwrap_or(DEFAULT_FRAMES_PER_SHOT)),
            BackendSpec::Http(_) => None,
        }
    }

    pub fn build(&self) -> Result<Backends, ConfigError> {
        let text: Box<dyn super::TextBackend> = match &self.text {
            BackendSpec::Mock { script: Some(path), .. } => Box::new(
                MockText::from_file(path).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
            BackendSpec::Mock { script: None, .. } => Box::new(MockText::queue(Vec::<String>::new())),
            BackendSpec::Http(cfg) => Box::new(HttpText::new(cfg.clone())?),
        };
        let image: Box<dyn super::ImageBackend> = match &self.image {
            BackendSpec::Mock { .. } => Box::new(MockImage::new()),
            BackendSpec::Http(cfg) => Box::new(HttpImage::new(cfg.clone())?),
        };
        let video: Box<dyn super::VideoBackend> = match &self.video {
            BackendSpec::Mock { frames, .. } => Box::new(
                MockVideo::new(frames.unwrap_or(DEFAULT_FRAMES_PER_SHOT))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
            BackendSpec::Http(cfg) => Box::new(HttpVideo::new(cfg.clone())?),
        };
        Ok(Backends { text, image, video })
    }

    fn resolve_paths(&mut self, base: &Path) {
        for spec in [&mut self.text, &mut self.image, &mut self.video] {
            if let BackendSpec::Mock { script: Some(p), .. } = spec {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// The CLI configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub output_root: Option<PathBuf>,
    #[serde(default)]
    pub memory_root: Option<PathBuf>,
    /// Directory whose `*.txt` files override the shipped prompt templates.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    /// Replacement banned-term list, one term per line.
    #[serde(default)]
    pub banned_terms: Option<PathBuf>,
    #[serde(default)]
    pub profiles: BTreeMap<String, Profile>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Loads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        fix(&mut cfg.output_root);
        fix(&mut cfg.memory_root);
        fix(&mut cfg.prompts_dir);
        fix(&mut cfg.banned_terms);
        for profile in cfg.profiles.values_mut() {
            profile.resolve_paths(&base);
        }
        Ok(cfg)
    }

    /// Named profile; `mock` is always available as an all-mock default.
    pub fn profile(&self, name: &str) -> Result<Profile, ConfigError> {
        match self.profiles.get(name) {
            Some(p) => Ok(p.clone()),
            None if name == MOCK_PROFILE => Ok(Profile::default()),
            None => Err(ConfigError::UnknownProfile(name.to_string())),
        }
    }
}
