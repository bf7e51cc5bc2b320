//! Feature extractors and the newline-delimited JSON protocol spoken with an
//! external embedder process.
//!
//! The process first writes one handshake record, then answers each request
//! line with exactly one response line:
//!
//! ```text
//! <- {"protocol":"videomemory-embed/1","identity":"...","dim":768,"metadata":{...}}
//! -> {"mode":"char","frame_path":"/abs/frame_0002.png"}
//! <- {"detected":true,"vector":[0.0123,...],"dim":768}
//! -> {"mode":"prop","frame_path":"/abs/f.png","prop_text":"a brass key"}
//! <- {"detected":false,"dim":768}
//! <- {"detected":false,"dim":768,"error":"unreadable frame"}
//! ```
//!
//! Decimals use the shortest representation that round-trips an `f64`.

use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{FeatureVector, Mode};
use crate::backends::mock::{band_rows, mean_rgb, read_rgb};
use crate::backends::BackendError;
use crate::domain::EntityCategory;

pub const PROTOCOL: &str = "videomemory-embed/1";
pub const MOCK_EMBEDDER_ID: &str = "mock-band-rgb/1";

#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("cannot read frame {path}: {message}")]
    Frame { path: PathBuf, message: String },
    #[error("embedder protocol violation: {0}")]
    Protocol(String),
    #[error("embedder reported an error: {0}")]
    Remote(String),
    #[error("embedder returned dim {got}, handshake declared {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot start embedder process: {0}")]
    Spawn(String),
    #[error("embedder I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub mode: Mode,
    pub frame_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub detected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub identity: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub metadata: Map<String, Value>,
}

/// Maps (mode, frame, optional prop text) to a descriptor. Implementations
/// must be deterministic.
pub trait Embedder: Send + Sync {
    fn identity(&self) -> String;
    fn dim(&self) -> usize;
    /// Extra facts recorded in reports (aggregation rule, thresholds, ...).
    fn metadata(&self) -> Map<String, Value> {
        Map::new()
    }
    fn embed(&self, request: &EmbedRequest) -> Result<FeatureVector, EmbedderError>;
}

/// Reads the pixel bands the mock image backend paints: characters in the
/// top third, props in the middle, background at the bottom. The descriptor
/// is the L2-normalized mean RGB of the mode's band; an all-black band means
/// nothing was detected. On a solid-color frame every mode sees that color.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEmbedder;

impl MockEmbedder {
    fn band(mode: Mode) -> EntityCategory {
        match mode {
            Mode::Char => EntityCategory::Character,
            Mode::Prop => EntityCategory::Prop,
            Mode::Bg => EntityCategory::Background,
        }
    }
}

impl Embedder for MockEmbedder {
    fn identity(&self) -> String {
        MOCK_EMBEDDER_ID.into()
    }

    fn dim(&self) -> usize {
        3
    }

    fn metadata(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("descriptor".into(), "normalized band mean rgb".into());
        m
    }

    fn embed(&self, request: &EmbedRequest) -> Result<FeatureVector, EmbedderError> {
        let img = read_rgb(&request.frame_path).map_err(|e| EmbedderError::Frame {
            path: request.frame_path.clone(),
            message: match e {
                BackendError::Io(io) => io.to_string(),
                other => other.to_string(),
            },
        })?;
        let mean = mean_rgb(&img, band_rows(Self::band(request.mode), img.height()));
        let norm = mean.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(FeatureVector::undetected());
        }
        Ok(FeatureVector::detected(mean.iter().map(|c| c / norm).collect()))
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// Client side of the protocol over any byte stream pair, usually the
/// stdio of a child process.
pub struct SidecarEmbedder {
    handshake: Handshake,
    conn: Mutex<Option<Connection>>,
    child: Option<Child>,
}

fn read_line(reader: &mut dyn BufRead) -> Result<String, EmbedderError> {
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(EmbedderError::Protocol("embedder closed the connection".into()));
        }
        if !line.trim().is_empty() {
            return Ok(line);
        }
    }
}

impl SidecarEmbedder {
    /// Reads the handshake from `reader`.
    pub fn connect(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self, EmbedderError> {
        let mut reader: Box<dyn BufRead + Send> = Box::new(reader);
        let line = read_line(reader.as_mut())?;
        let handshake: Handshake = serde_json::from_str(&line)
            .map_err(|e| EmbedderError::Protocol(format!("bad handshake: {e}")))?;
        if handshake.protocol != PROTOCOL {
            return Err(EmbedderError::Protocol(format!(
                "unsupported protocol {:?}, expected {PROTOCOL:?}",
                handshake.protocol
            )));
        }
        if handshake.dim == 0 {
            return Err(EmbedderError::Protocol("handshake declares dim 0".into()));
        }
        Ok(Self {
            handshake,
            conn: Mutex::new(Some(Connection {
                reader,
                writer: Box::new(writer),
            })),
            child: None,
        })
    }

    /// Starts `program args...` and talks to it over its stdio.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, EmbedderError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EmbedderError::Spawn(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::connect(BufReader::new(stdout), stdin) {
            Ok(mut s) => {
                s.child = Some(child);
                Ok(s)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// Connects to an embedder listening on a Unix domain socket.
    #[cfg(unix)]
    pub fn connect_socket(path: &Path) -> Result<Self, EmbedderError> {
        let stream = std::os::unix::net::UnixStream::connect(path)?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::connect(reader, stream)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn exchange(&self, request: &EmbedRequest) -> Result<EmbedResponse, EmbedderError> {
        let mut guard = self.conn.lock().unwrap();
        let conn = guard
            .as_mut()
            .ok_or_else(|| EmbedderError::Protocol("connection already closed".into()))?;
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        conn.writer.write_all(line.as_bytes())?;
        conn.writer.flush()?;
        let reply = read_line(conn.reader.as_mut())?;
        serde_json::from_str(&reply).map_err(|e| EmbedderError::Protocol(format!("bad response: {e}")))
    }
}

impl Embedder for SidecarEmbedder {
    fn identity(&self) -> String {
        self.handshake.identity.clone()
    }

    fn dim(&self) -> usize {
        self.handshake.dim
    }

    fn metadata(&self) -> Map<String, Value> {
        self.handshake.metadata.clone()
    }

    fn embed(&self, request: &EmbedRequest) -> Result<FeatureVector, EmbedderError> {
        let mut request = request.clone();
        if let Ok(abs) = std::path::absolute(&request.frame_path) {
            request.frame_path = abs;
        }
        let response = self.exchange(&request)?;
        if let Some(e) = response.error {
            return Err(EmbedderError::Remote(e));
        }
        let expected = self.handshake.dim;
        if response.dim != expected {
            return Err(EmbedderError::DimensionMismatch {
                expected,
                got: response.dim,
            });
        }
        match (response.detected, response.vector) {
            (true, Some(v)) if v.len() == expected => Ok(FeatureVector::detected(v)),
            (true, Some(v)) => Err(EmbedderError::DimensionMismatch {
                expected,
                got: v.len(),
            }),
            (true, None) => Err(EmbedderError::Protocol("detected response without a vector".into())),
            (false, Some(v)) if !v.is_empty() => Err(EmbedderError::Protocol(
                "undetected response carries a vector".into(),
            )),
            (false, _) => Ok(FeatureVector::undetected()),
        }
    }
}

impl Drop for SidecarEmbedder {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved process exit on its own.
        self.conn.lock().map(|mut c| c.take()).ok();
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Server side of the protocol: handshake, then one response per request
/// until end of input. Request failures become error records.
pub fn serve(
    embedder: &dyn Embedder,
    reader: impl BufRead,
    mut writer: impl Write,
) -> io::Result<()> {
    let dim = embedder.dim();
    let handshake = Handshake {
        protocol: PROTOCOL.into(),
        identity: embedder.identity(),
        dim,
        metadata: embedder.metadata(),
    };
    writeln!(writer, "{}", serde_json::to_string(&handshake).expect("handshake serializes"))?;
    writer.flush()?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<EmbedRequest>(&line) {
            Err(e) => failure(dim, format!("bad request: {e}")),
            Ok(req) => match embedder.embed(&req) {
                Ok(f) if f.detected => EmbedResponse {
                    detected: true,
                    vector: Some(f.values),
                    dim,
                    error: None,
                },
                Ok(_) => EmbedResponse {
                    detected: false,
                    vector: None,
                    dim,
                    error: None,
                },
                Err(e) => failure(dim, e.to_string()),
            },
        };
        writeln!(writer, "{}", serde_json::to_string(&response).expect("response serializes"))?;
        writer.flush()?;
    }
    Ok(())
}

fn failure(dim: usize, message: String) -> EmbedResponse {
    EmbedResponse {
        detected: false,
        vector: None,
        dim,
        error: Some(message),
    }
}
