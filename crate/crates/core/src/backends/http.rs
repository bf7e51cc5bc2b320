//! JSON-over-HTTP adapters for remote model services.
//!
//! Every adapter POSTs a JSON body to its configured endpoint:
//!
//! * text: `{model, template, prompt, attachments: [{mime_type, data_base64}]}`,
//!   answered with `{"text": ...}`, `{"output": ...}` or a plain-text body.
//! * image: `{model, purpose, prompt, seed?, references: [{name, role, mime_type, data_base64}]}`,
//!   answered with raw `image/*` bytes, `{"image_base64": ...}` or `{"url": ...}`.
//! * video: `{model, prompt, keyframe: {mime_type, data_base64}}`, answered with
//!   `{"frames_base64": [...]}` or `{"frame_urls": [...]}`.
//!
//! Images are transcoded to PNG on arrival. Transient failures (timeouts,
//! transport errors, 5xx, undecodable bodies) are retried with exponential
//! backoff; 4xx responses fail immediately.

use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::ImageFormat;
use serde_json::{json, Value};

use super::config::{BackendConfig, ConfigError};
use super::mock::write_png;
use super::{
    BackendError, CallRecord, ImageBackend, ImagePurpose, ImageRequest, TextBackend, TextRequest,
    VideoBackend, VideoRequest,
};
use crate::domain::{list_frames, AssetRef};

const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;
const REDACTED: &str = "[redacted]";

struct Response {
    status: u16,
    content_type: String,
    body: Vec<u8>,
}

/// Shared transport: auth, timeouts, retries and call logging.
struct HttpClient {
    name: &'static str,
    config: BackendConfig,
    secret: Option<String>,
    agent: ureq::Agent,
    calls: Mutex<Vec<CallRecord>>,
}

impl HttpClient {
    fn new(name: &'static str, config: BackendConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let secret = config.api_key()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            name,
            config,
            secret,
            agent,
            calls: Mutex::new(Vec::new()),
        })
    }

    fn redact(&self, text: &str) -> String {
        match &self.secret {
            Some(s) => text.replace(s.as_str(), REDACTED),
            None => text.to_string(),
        }
    }

    fn once(&self, url: &str, body: Option<&[u8]>) -> Result<Response, BackendError> {
        let result = match body {
            Some(bytes) => {
                let mut req = self
                    .agent
                    .post(url)
                    .header("content-type", "application/json");
                if let Some(secret) = &self.secret {
                    req = req.header(self.config.auth_header.as_str(), self.auth_value(secret));
                }
                req.send(bytes)
            }
            None => self.agent.get(url).call(),
        };
        let mut resp = result.map_err(|e| self.map_transport(e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::HttpStatus(status));
        }
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_ascii_lowercase();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_vec()
            .map_err(|e| self.map_transport(e))?;
        Ok(Response {
            status,
            content_type,
            body,
        })
    }

    fn auth_value(&self, secret: &str) -> String {
        if self.config.auth_scheme.is_empty() {
            secret.to_string()
        } else {
            format!("{} {secret}", self.config.auth_scheme)
        }
    }

    fn map_transport(&self, err: ureq::Error) -> BackendError {
        match err {
            ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
            ureq::Error::StatusCode(code) => BackendError::HttpStatus(code),
            other => BackendError::Transport(self.redact(&other.to_string())),
        }
    }

    /// Sends a request and decodes the response, retrying transient
    /// failures. `decode` failures count as transient.
    fn with_retries<T>(
        &self,
        url: &str,
        body: Option<&[u8]>,
        mut decode: impl FnMut(Response) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let allowed = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = self.once(url, body).and_then(|r| {
                let status = r.status;
                decode(r).map(|v| (v, status))
            });
            match outcome {
                Ok((value, status)) => {
                    self.log(url, attempt, Some(status), "ok".into());
                    return Ok(value);
                }
                Err(err) if err.is_retryable() && attempt < allowed => {
                    log::warn!(
                        "{} attempt {attempt}/{allowed} failed: {}",
                        self.name,
                        self.redact(&err.to_string())
                    );
                    let delay = self
                        .config
                        .backoff_ms
                        .saturating_mul(1u64 << (attempt - 1).min(16));
                    thread::sleep(Duration::from_millis(delay));
                }
                Err(err) => {
                    let status = match err {
                        BackendError::HttpStatus(code) => Some(code),
                        _ => None,
                    };
                    self.log(url, attempt, status, self.redact(&err.to_string()));
                    return Err(err);
                }
            }
        }
    }

    fn post_json<T>(
        &self,
        body: &Value,
        decode: impl FnMut(Response) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let bytes = serde_json::to_vec(body).map_err(|e| BackendError::Decode(e.to_string()))?;
        let url = self.config.endpoint.clone();
        self.with_retries(&url, Some(&bytes), decode)
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, BackendError> {
        self.with_retries(url, None, |r| Ok(r.body))
    }

    fn log(&self, url: &str, attempts: u32, status: Option<u16>, outcome: String) {
        self.calls.lock().unwrap().push(CallRecord {
            backend: self.name.to_string(),
            target: self.redact(url),
            attempts,
            status,
            outcome,
        });
    }

    fn take_calls(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.calls.lock().unwrap())
    }
}

fn parse_json(r: &Response) -> Result<Value, BackendError> {
    serde_json::from_slice(&r.body).map_err(|e| BackendError::Decode(format!("invalid JSON: {e}")))
}

fn is_json(r: &Response) -> bool {
    r.content_type.contains("json") || r.body.first() == Some(&b'{')
}

fn decode_b64(s: &str) -> Result<Vec<u8>, BackendError> {
    B64.decode(s.trim())
        .map_err(|e| BackendError::Decode(format!("invalid base64: {e}")))
}

fn inline_image(path: &Path) -> Result<Value, BackendError> {
    let bytes = fs::read(path)?;
    Ok(json!({ "mime_type": "image/png", "data_base64": B64.encode(bytes) }))
}

/// Decodes any supported image encoding and writes it as PNG.
fn store_png(bytes: &[u8], output: &Path) -> Result<(), BackendError> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| BackendError::Decode(format!("not an image: {e}")))?;
    if image::guess_format(bytes).ok() == Some(ImageFormat::Png) {
        if let Some(parent) = output.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(output, bytes)?;
        Ok(())
    } else {
        write_png(&img.to_rgb8(), output)
    }
}

// ---------------------------------------------------------------------------

pub struct HttpText {
    client: HttpClient,
}

impl HttpText {
    pub fn new(config: BackendConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            client: HttpClient::new("http-text", config)?,
        })
    }
}

impl TextBackend for HttpText {
    fn complete(&self, request: &TextRequest) -> Result<String, BackendError> {
        let attachments = request
            .attachments
            .iter()
            .map(|p| inline_image(p))
            .collect::<Result<Vec<_>, _>>()?;
        let body = json!({
            "model": self.client.config.model,
            "template": request.template,
            "prompt": request.prompt,
            "attachments": attachments,
        });
        self.client.post_json(&body, |r| {
            let text = if is_json(&r) {
                let v = parse_json(&r)?;
                ["text", "output"]
                    .iter()
                    .find_map(|k| v.get(*k).and_then(Value::as_str))
                    .map(str::to_string)
                    .ok_or_else(|| BackendError::Decode("response has no text field".into()))?
            } else {
                String::from_utf8(r.body)
                    .map_err(|_| BackendError::Decode("response is not UTF-8".into()))?
            };
            if text.trim().is_empty() {
                return Err(BackendError::Decode("empty response".into()));
            }
            Ok(text)
        })
    }

    fn take_calls(&self) -> Vec<CallRecord> {
        self.client.take_calls()
    }
}

pub struct HttpImage {
    client: HttpClient,
}

impl HttpImage {
    pub fn new(config: BackendConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            client: HttpClient::new("http-image", config)?,
        })
    }
}

impl ImageBackend for HttpImage {
    fn generate(&self, request: &ImageRequest) -> Result<AssetRef, BackendError> {
        let mut references = Vec::with_capacity(request.references.len());
        for r in &request.references {
            let mut entry = inline_image(&r.asset.path)?;
            entry["name"] = json!(r.name);
            entry["role"] = json!(r.category.as_str());
            references.push(entry);
        }
        let purpose = match request.purpose {
            ImagePurpose::Keyframe => "keyframe".to_string(),
            ImagePurpose::Reference(cat) => format!("reference:{}", cat.as_str()),
        };
        let mut body = json!({
            "model": self.client.config.model,
            "purpose": purpose,
            "prompt": request.prompt,
            "references": references,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let bytes = self.client.post_json(&body, |r| {
            if r.content_type.starts_with("image/") {
                return Ok(ImagePayload::Bytes(r.body));
            }
            let v = parse_json(&r)?;
            if let Some(s) = v.get("image_base64").and_then(Value::as_str) {
                Ok(ImagePayload::Bytes(decode_b64(s)?))
            } else if let Some(u) = v.get("url").and_then(Value::as_str) {
                Ok(ImagePayload::Url(u.to_string()))
            } else {
                Err(BackendError::Decode("response has no image".into()))
            }
        })?;
        let bytes = match bytes {
            ImagePayload::Bytes(b) => b,
            ImagePayload::Url(u) => self.client.fetch(&u)?,
        };
        store_png(&bytes, &request.output)?;
        Ok(AssetRef::image(&request.output)?)
    }

    fn take_calls(&self) -> Vec<CallRecord> {
        self.client.take_calls()
    }
}

enum ImagePayload {
    Bytes(Vec<u8>),
    Url(String),
}

pub struct HttpVideo {
    client: HttpClient,
}

impl HttpVideo {
    pub fn new(config: BackendConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            client: HttpClient::new("http-video", config)?,
        })
    }
}

impl VideoBackend for HttpVideo {
    fn animate(&self, request: &VideoRequest) -> Result<AssetRef, BackendError> {
        let body = json!({
            "model": self.client.config.model,
            "prompt": request.prompt,
            "keyframe": inline_image(&request.keyframe.path)?,
        });
        let payload = self.client.post_json(&body, |r| {
            let v = parse_json(&r)?;
            let strings = |key: &str| {
                v.get(key).and_then(Value::as_array).map(|a| {
                    a.iter()
                        .map(|x| x.as_str().map(str::to_string))
                        .collect::<Option<Vec<_>>>()
                })
            };
            match (strings("frames_base64"), strings("frame_urls")) {
                (Some(Some(frames)), _) if !frames.is_empty() => Ok((frames, false)),
                (_, Some(Some(urls))) if !urls.is_empty() => Ok((urls, true)),
                _ => Err(BackendError::Decode("response has no frames".into())),
            }
        })?;
        let (items, are_urls) = payload;
        fs::create_dir_all(&request.output_dir)?;
        for stale in list_frames(&request.output_dir)? {
            fs::remove_file(stale)?;
        }
        for (i, item) in items.iter().enumerate() {
            let bytes = if are_urls {
                self.client.fetch(item)?
            } else {
                decode_b64(item)?
            };
            store_png(&bytes, &request.output_dir.join(format!("frame_{i:04}.png")))?;
        }
        Ok(AssetRef::frame_sequence(&request.output_dir)?)
    }

    fn take_calls(&self) -> Vec<CallRecord> {
        self.client.take_calls()
    }
}
