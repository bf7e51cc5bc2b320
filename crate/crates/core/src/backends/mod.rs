//! Contracts for the external generative services (text LLM, image model,
//! image-to-video model) plus deterministic mocks and thin HTTP adapters.

pub mod config;
pub mod http;
pub mod mock;

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AssetRef, EntityCategory};

pub use config::{BackendConfig, BackendSpec, ConfigError, ConfigFile, MatcherKind, Profile};
pub use http::{HttpImage, HttpText, HttpVideo};
pub use mock::{MockImage, MockText, MockVideo};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("mock text queue exhausted (template {template}, shot {shot:?})")]
    QueueExhausted { template: String, shot: Option<u32> },
    #[error("no mock rule for template {template}, shot {shot:?}")]
    NoRule { template: String, shot: Option<u32> },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("could not decode backend response: {0}")]
    Decode(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("backend I/O: {0}")]
    Io(#[from] io::Error),
}

impl BackendError {
    /// Client errors (4xx) and local misconfiguration are final.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::HttpStatus(code) => !(400..500).contains(code),
            BackendError::Timeout(_) | BackendError::Decode(_) | BackendError::Transport(_) => true,
            _ => false,
        }
    }
}

/// A prompt sent to the text model, tagged with the template that produced
/// it so mocks can route responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRequest {
    pub template: String,
    pub shot: Option<u32>,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<PathBuf>,
}

impl TextRequest {
    pub fn new(template: impl Into<String>, shot: Option<u32>, prompt: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            shot,
            prompt: prompt.into(),
            attachments: Vec::new(),
        }
    }
}

pub trait TextBackend: Send + Sync {
    /// Returns a non-empty response or an error.
    fn complete(&self, request: &TextRequest) -> Result<String, BackendError>;

    /// Calls recorded since the last drain.
    fn take_calls(&self) -> Vec<CallRecord> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "category")]
pub enum ImagePurpose {
    /// A memory-bank reference for one entity.
    Reference(EntityCategory),
    /// A shot keyframe composed from entity references.
    Keyframe,
}

/// One conditioning image. `asset.path` must be resolvable from the process
/// working directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceImage {
    pub name: String,
    pub category: EntityCategory,
    pub asset: AssetRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRequest {
    pub purpose: ImagePurpose,
    pub prompt: String,
    pub references: Vec<ReferenceImage>,
    /// Variation seed; the no-memory ablation sets it to the shot index.
    pub seed: Option<u64>,
    pub output: PathBuf,
}

pub trait ImageBackend: Send + Sync {
    /// Writes an image at `request.output` and returns a reference to it.
    fn generate(&self, request: &ImageRequest) -> Result<AssetRef, BackendError>;

    fn take_calls(&self) -> Vec<CallRecord> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRequest {
    pub keyframe: AssetRef,
    pub prompt: String,
    pub output_dir: PathBuf,
}

pub trait VideoBackend: Send + Sync {
    /// Writes `frame_0000.png ...` under `request.output_dir`; the first
    /// frame is the keyframe.
    fn animate(&self, request: &VideoRequest) -> Result<AssetRef, BackendError>;

    fn take_calls(&self) -> Vec<CallRecord> {
        Vec::new()
    }
}

/// One backend call as it appears in a run manifest. Secrets never reach
/// these records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub backend: String,
    pub target: String,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    pub outcome: String,
}

/// The three services a pipeline run needs.
pub struct Backends {
    pub text: Box<dyn TextBackend>,
    pub image: Box<dyn ImageBackend>,
    pub video: Box<dyn VideoBackend>,
}

impl Backends {
    pub fn take_calls(&self) -> Vec<CallRecord> {
        let mut calls = self.text.take_calls();
        calls.extend(self.image.take_calls());
        calls.extend(self.video.take_calls());
        calls
    }
}
