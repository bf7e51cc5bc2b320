//! Deterministic stand-ins for the generative services.
//!
//! The image mock paints identity as color. A reference image is a solid
//! 64x64 PNG whose RGB value is the low 24 bits of FNV-1a 64 over the prompt,
//! the digests of any conditioning images and the optional seed. A keyframe
//! is composed from its references: the frame is split into three horizontal
//! bands (characters, props, background, top to bottom) and each band is
//! divided into one column per reference of that category, painted with the
//! reference's mean color. Bands without references stay black. The mock
//! embedder in [`crate::eval`] reads the same bands back, which lets
//! consistency metrics observe memory reuse without any learned model.

use std::collections::VecDeque;
use std::fs;
use std::io;
use std::ops::Range;
use std::path::Path;
use std::sync::{Arc, Mutex};

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    BackendError, CallRecord, ImageBackend, ImagePurpose, ImageRequest, TextBackend, TextRequest,
    VideoBackend, VideoRequest,
};
use crate::digest::fnv1a64;
use crate::domain::{list_frames, AssetRef, EntityCategory};

pub const MOCK_IMAGE_SIZE: u32 = 64;

/// Rows of the band holding `category` in an image of the given height.
pub fn band_rows(category: EntityCategory, height: u32) -> Range<u32> {
    let third = height / 3;
    match category {
        EntityCategory::Character => 0..third,
        EntityCategory::Prop => third..2 * third,
        EntityCategory::Background => 2 * third..height,
    }
}

/// Mean RGB over the given rows (all columns).
pub fn mean_rgb(img: &RgbImage, rows: Range<u32>) -> [f64; 3] {
    let mut sum = [0f64; 3];
    let mut n = 0u64;
    for y in rows.filter(|&y| y < img.height()) {
        for x in 0..img.width() {
            let p = img.get_pixel(x, y);
            for c in 0..3 {
                sum[c] += f64::from(p[c]);
            }
            n += 1;
        }
    }
    if n == 0 {
        return sum;
    }
    sum.map(|s| s / n as f64)
}

/// Color the mock assigns to a reference-generation request.
pub fn mock_color(prompt: &str, reference_digests: &[&str], seed: Option<u64>) -> [u8; 3] {
    let mut bytes = prompt.as_bytes().to_vec();
    for d in reference_digests {
        bytes.extend_from_slice(d.as_bytes());
    }
    if let Some(seed) = seed {
        bytes.extend_from_slice(seed.to_string().as_bytes());
    }
    let rgb = fnv1a64(&bytes) & 0x00ff_ffff;
    [(rgb >> 16) as u8, (rgb >> 8) as u8, rgb as u8]
}

pub(crate) fn write_png(img: &RgbImage, path: &Path) -> Result<(), BackendError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| BackendError::Io(io::Error::other(e.to_string())))
}

pub(crate) fn read_rgb(path: &Path) -> Result<RgbImage, BackendError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => BackendError::Io(io),
        other => BackendError::Decode(format!("{}: {other}", path.display())),
    })?;
    Ok(img.to_rgb8())
}

// ---------------------------------------------------------------------------
// Text
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub template: String,
    #[serde(default)]
    pub shot: Option<u32>,
    pub response: String,
}

/// On-disk form of a mock text script. Responses given as JSON values
/// rather than strings are rendered as fenced JSON blocks.
#[derive(Debug, Clone, Default, Deserialize)]
struct MockScriptFile {
    #[serde(default)]
    queue: Option<Vec<Value>>,
    #[serde(default)]
    rules: Option<Vec<RawRule>>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawRule {
    template: String,
    #[serde(default)]
    shot: Option<u32>,
    response: Value,
}

pub fn render_response(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => format!(
            "```json\n{}\n```",
            serde_json::to_string_pretty(other).expect("json value serializes")
        ),
    }
}

enum Script {
    Queue(VecDeque<String>),
    Rules(Vec<MockRule>),
}

/// Scripted text backend: either a FIFO queue or a `(template, shot)` rule
/// table. Rules with `shot: None` match any shot of their template; a rule
/// naming the exact shot wins.
#[derive(Clone)]
pub struct MockText {
    script: Arc<Mutex<Script>>,
    requests: Arc<Mutex<Vec<TextRequest>>>,
    pending: Arc<Mutex<Vec<CallRecord>>>,
}

impl MockText {
    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_script(Script::Queue(responses.into_iter().map(Into::into).collect()))
    }

    pub fn rules(rules: Vec<MockRule>) -> Self {
        Self::with_script(Script::Rules(rules))
    }

    fn with_script(script: Script) -> Self {
        Self {
            script: Arc::new(Mutex::new(script)),
            requests: Arc::default(),
            pending: Arc::default(),
        }
    }

    /// Loads a `{"queue": [...]}` or `{"rules": [...]}` script.
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let file: MockScriptFile =
            serde_json::from_str(text).map_err(|e| BackendError::Config(format!("mock script: {e}")))?;
        match (file.queue, file.rules) {
            (Some(q), None) => Ok(Self::queue(q.iter().map(render_response))),
            (None, Some(r)) => Ok(Self::rules(
                r.into_iter()
                    .map(|r| MockRule {
                        template: r.template,
                        shot: r.shot,
                        response: render_response(&r.response),
                    })
                    .collect(),
            )),
            _ => Err(BackendError::Config(
                "mock script needs exactly one of `queue` or `rules`".into(),
            )),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Every request received so far.
    pub fn requests(&self) -> Vec<TextRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl TextBackend for MockText {
    fn complete(&self, request: &TextRequest) -> Result<String, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        let result = match &mut *self.script.lock().unwrap() {
            Script::Queue(queue) => queue.pop_front().ok_or_else(|| BackendError::QueueExhausted {
                template: request.template.clone(),
                shot: request.shot,
            }),
            Script::Rules(rules) => {
                let exact = rules
                    .iter()
                    .find(|r| r.template == request.template && r.shot.is_some() && r.shot == request.shot);
                let wildcard = || {
                    rules
                        .iter()
                        .find(|r| r.template == request.template && r.shot.is_none())
                };
                exact
                    .or_else(wildcard)
                    .map(|r| r.response.clone())
                    .ok_or_else(|| BackendError::NoRule {
                        template: request.template.clone(),
                        shot: request.shot,
                    })
            }
        };
        self.pending.lock().unwrap().push(CallRecord {
            backend: "mock-text".into(),
            target: match request.shot {
                Some(s) => format!("{}#{s}", request.template),
                None => request.template.clone(),
            },
            attempts: 1,
            status: None,
            outcome: match &result {
                Ok(_) => "ok".into(),
                Err(e) => format!("error: {e}"),
            },
        });
        result
    }

    fn take_calls(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.pending.lock().unwrap())
    }
}

// ---------------------------------------------------------------------------
// Image
// ---------------------------------------------------------------------------

/// What the image mock was asked to do, for call-count assertions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageCall {
    pub purpose: ImagePurpose,
    pub prompt: String,
    pub reference_digests: Vec<String>,
    pub seed: Option<u64>,
}

#[derive(Clone, Default)]
pub struct MockImage {
    calls: Arc<Mutex<Vec<ImageCall>>>,
    pending: Arc<Mutex<Vec<CallRecord>>>,
}

impl MockImage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> Vec<ImageCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn reference_calls(&self, category: EntityCategory) -> usize {
        self.calls
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.purpose == ImagePurpose::Reference(category))
            .count()
    }

    pub fn keyframe_calls(&self) -> usize {
        self.calls
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.purpose == ImagePurpose::Keyframe)
            .count()
    }

    fn render(&self, request: &ImageRequest) -> Result<RgbImage, BackendError> {
        let size = MOCK_IMAGE_SIZE;
        if request.purpose != ImagePurpose::Keyframe || request.references.is_empty() {
            let digests: Vec<&str> = request.references.iter().map(|r| r.asset.digest.as_str()).collect();
            let color = mock_color(&request.prompt, &digests, request.seed);
            return Ok(RgbImage::from_pixel(size, size, Rgb(color)));
        }
        let mut img = RgbImage::new(size, size);
        for category in EntityCategory::ALL {
            let refs: Vec<_> = request
                .references
                .iter()
                .filter(|r| r.category == category)
                .collect();
            if refs.is_empty() {
                continue;
            }
            let rows = band_rows(category, size);
            for (i, r) in refs.iter().enumerate() {
                let src = read_rgb(&r.asset.path)?;
                let mean = mean_rgb(&src, 0..src.height());
                let color = Rgb(mean.map(|c| c.round() as u8));
                let n = refs.len() as u32;
                let cols = (size * i as u32 / n)..(size * (i as u32 + 1) / n);
                for y in rows.clone() {
                    for x in cols.clone() {
                        img.put_pixel(x, y, color);
                    }
                }
            }
        }
        Ok(img)
    }
}

impl ImageBackend for MockImage {
    fn generate(&self, request: &ImageRequest) -> Result<AssetRef, BackendError> {
        self.calls.lock().unwrap().push(ImageCall {
            purpose: request.purpose,
            prompt: request.prompt.clone(),
            reference_digests: request.references.iter().map(|r| r.asset.digest.clone()).collect(),
            seed: request.seed,
        });
        let img = self.render(request)?;
        write_png(&img, &request.output)?;
        let asset = AssetRef::image(&request.output)?;
        self.pending.lock().unwrap().push(CallRecord {
            backend: "mock-image".into(),
            target: match request.purpose {
                ImagePurpose::Keyframe => "keyframe".into(),
                ImagePurpose::Reference(c) => format!("reference/{c}"),
            },
            attempts: 1,
            status: None,
            outcome: "ok".into(),
        });
        Ok(asset)
    }

    fn take_calls(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.pending.lock().unwrap())
    }
}

// ---------------------------------------------------------------------------
// Video
// ---------------------------------------------------------------------------

/// Emits a fixed number of frames, each a byte copy of the keyframe.
#[derive(Clone)]
pub struct MockVideo {
    frames: usize,
    calls: Arc<Mutex<usize>>,
    pending: Arc<Mutex<Vec<CallRecord>>>,
}

impl MockVideo {
    pub fn new(frames: usize) -> Result<Self, BackendError> {
        if frames == 0 {
            return Err(BackendError::Config("mock video needs at least one frame".into()));
        }
        Ok(Self {
            frames,
            calls: Arc::default(),
            pending: Arc::default(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn call_count(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl VideoBackend for MockVideo {
    fn animate(&self, request: &VideoRequest) -> Result<AssetRef, BackendError> {
        *self.calls.lock().unwrap() += 1;
        let bytes = fs::read(&request.keyframe.path)?;
        fs::create_dir_all(&request.output_dir)?;
        for stale in list_frames(&request.output_dir)? {
            fs::remove_file(stale)?;
        }
        for i in 0..self.frames {
            fs::write(request.output_dir.join(format!("frame_{i:04}.png")), &bytes)?;
        }
        self.pending.lock().unwrap().push(CallRecord {
            backend: "mock-video".into(),
            target: format!("{} frames", self.frames),
            attempts: 1,
            status: None,
            outcome: "ok".into(),
        });
        Ok(AssetRef::frame_sequence(&request.output_dir)?)
    }

    fn take_calls(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.pending.lock().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ReferenceImage;
    use crate::digest::sha256_file;
    use std::path::PathBuf;

    fn req(prompt: &str, refs: Vec<ReferenceImage>, seed: Option<u64>, out: PathBuf) -> ImageRequest {
        ImageRequest {
            purpose: ImagePurpose::Reference(EntityCategory::Character),
            prompt: prompt.into(),
            references: refs,
            seed,
            output: out,
        }
    }

    #[test]
    fn queue_in_order_then_exhausted() {
        let m = MockText::queue(["one", "two"]);
        let r = TextRequest::new("storyboard", None, "p");
        assert_eq!(m.complete(&r).unwrap(), "one");
        assert_eq!(m.complete(&r).unwrap(), "two");
        assert!(matches!(m.complete(&r), Err(BackendError::QueueExhausted { .. })));
    }

    #[test]
    fn rule_table_routes_by_template_and_shot() {
        let m = MockText::rules(vec![
            MockRule { template: "memory_analyze".into(), shot: Some(2), response: "shot two".into() },
            MockRule { template: "memory_analyze".into(), shot: None, response: "any".into() },
        ]);
        assert_eq!(m.complete(&TextRequest::new("memory_analyze", Some(2), "")).unwrap(), "shot two");
        assert_eq!(m.complete(&TextRequest::new("memory_analyze", Some(3), "")).unwrap(), "any");
        assert!(matches!(
            m.complete(&TextRequest::new("storyboard", None, "")),
            Err(BackendError::NoRule { .. })
        ));
    }

    #[test]
    fn script_file_renders_json_values_fenced() {
        let m = MockText::from_json(r#"{"rules":[{"template":"t","response":{"a":1}}]}"#).unwrap();
        let out = m.complete(&TextRequest::new("t", None, "")).unwrap();
        assert!(out.starts_with("```json\n") && out.ends_with("\n```"), "{out}");
        assert!(MockText::from_json(r#"{"queue":[],"rules":[]}"#).is_err());
    }

    #[test]
    fn image_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let m = MockImage::new();
        let a = m.generate(&req("Anna", vec![], None, dir.path().join("a.png"))).unwrap();
        let b = m.generate(&req("Anna", vec![], None, dir.path().join("b.png"))).unwrap();
        assert_eq!(a.digest, b.digest);
        let img = read_rgb(&a.path).unwrap();
        assert_eq!(img.dimensions(), (64, 64));
        assert_eq!(img.get_pixel(0, 0).0, mock_color("Anna", &[], None));
    }

    #[test]
    fn seed_changes_digest() {
        let dir = tempfile::tempdir().unwrap();
        let m = MockImage::new();
        let s1 = m.generate(&req("Anna", vec![], Some(1), dir.path().join("1.png"))).unwrap();
        let s2 = m.generate(&req("Anna", vec![], Some(2), dir.path().join("2.png"))).unwrap();
        assert_ne!(mock_color("Anna", &[], Some(1)), mock_color("Anna", &[], Some(2)));
        assert_ne!(s1.digest, s2.digest);
    }

    #[test]
    fn references_change_digest() {
        let dir = tempfile::tempdir().unwrap();
        let m = MockImage::new();
        let base = m.generate(&req("Anna", vec![], None, dir.path().join("a.png"))).unwrap();
        let r = ReferenceImage { name: "Anna".into(), category: EntityCategory::Character, asset: base.clone() };
        let with_ref = m.generate(&req("Anna", vec![r], None, dir.path().join("b.png"))).unwrap();
        assert_ne!(mock_color("Anna", &[], None), mock_color("Anna", &[&base.digest], None));
        assert_ne!(base.digest, with_ref.digest);
    }

    #[test]
    fn keyframe_bands_carry_reference_colors() {
        let dir = tempfile::tempdir().unwrap();
        let m = MockImage::new();
        let mk = |name: &str, cat| {
            let a = m.generate(&req(name, vec![], None, dir.path().join(format!("{name}.png")))).unwrap();
            ReferenceImage { name: name.into(), category: cat, asset: a }
        };
        let refs = vec![
            mk("Harry", EntityCategory::Character),
            mk("feather", EntityCategory::Prop),
            mk("hall", EntityCategory::Background),
        ];
        let key = m
            .generate(&ImageRequest {
                purpose: ImagePurpose::Keyframe,
                prompt: "scene".into(),
                references: refs,
                seed: None,
                output: dir.path().join("key.png"),
            })
            .unwrap();
        let img = read_rgb(&key.path).unwrap();
        assert_eq!(img.get_pixel(5, 5).0, mock_color("Harry", &[], None));
        assert_eq!(img.get_pixel(5, 30).0, mock_color("feather", &[], None));
        assert_eq!(img.get_pixel(5, 60).0, mock_color("hall", &[], None));
        assert_eq!(m.keyframe_calls(), 1);
        assert_eq!(m.reference_calls(EntityCategory::Character), 3);
    }

    #[test]
    fn video_frames_copy_keyframe() {
        let dir = tempfile::tempdir().unwrap();
        let key = dir.path().join("key.png");
        fs::write(&key, b"keyframe-bytes").unwrap();
        let keyframe = AssetRef::image(&key).unwrap();
        for frames in [5, 1] {
            let out = dir.path().join(format!("v{frames}"));
            let v = MockVideo::new(frames).unwrap();
            let asset = v
                .animate(&VideoRequest { keyframe: keyframe.clone(), prompt: "p".into(), output_dir: out.clone() })
                .unwrap();
            let listed = asset.frames(Path::new("")).unwrap();
            assert_eq!(listed.len(), frames);
            for f in listed {
                assert_eq!(sha256_file(&f).unwrap(), keyframe.digest);
            }
        }
    }

    #[test]
    fn video_missing_keyframe_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let v = MockVideo::new(3).unwrap();
        let err = v
            .animate(&VideoRequest {
                keyframe: AssetRef {
                    path: dir.path().join("missing.png"),
                    kind: crate::domain::AssetKind::Image,
                    digest: String::new(),
                },
                prompt: "p".into(),
                output_dir: dir.path().join("out"),
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::Io(_)));
        assert!(MockVideo::new(0).is_err());
    }
}
