//! End-to-end run: plan once, then for every shot in order analyze its
//! entities, resolve a reference image for each (reusing the memory bank
//! where possible), compose a keyframe and animate it.
//!
//! A run lives in `<output_root>/<run_id>/`:
//!
//! ```text
//! manifest.json
//! memory/                      default bank root
//! shots/<i>/keyframe.png
//! shots/<i>/video/frame_0000.png ...
//! shots/<i>/refs/              references that bypass the bank
//! ```
//!
//! The manifest is rewritten after every shot; paths inside it are relative
//! to the run directory, so two runs of the same fixture in different output
//! roots produce byte-identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    build_keyframe_request, build_video_prompt, memory_analyze_shot, storyboard_plan, AgentError,
    BannedTerms, PromptSet,
};
use crate::backends::{
    Backends, CallRecord, ImageBackend, ImagePurpose, ImageRequest, ReferenceImage, VideoRequest,
};
use crate::digest::fnv1a64_hex8;
use crate::domain::{
    AssetRef, EntityCategory, EntitySpec, Provenance, ResolvedEntity, ShotDescription, ShotRecord,
    Storyboard, Synopsis,
};
use crate::memory::{
    image_file_name, GenerationError, MemoryBank, MemoryEntry, MemoryError, ReferenceGenerator,
    SemanticMatcher,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "videomemory-run/1";
pub const DEFAULT_MEMORY_DIR: &str = "memory";

/// Bank snapshot: SHA-256 of each store's index file (`None` when absent).
pub type BankSnapshot = BTreeMap<String, Option<String>>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Planning(AgentError),
    #[error("shot {shot} failed: {message}")]
    ShotFailed {
        shot: u32,
        message: String,
        manifest: Box<RunManifest>,
    },
    #[error("memory bank {store} store differs from the run's last snapshot (expected {expected:?}, found {actual:?})")]
    SnapshotMismatch {
        store: String,
        expected: Option<String>,
        actual: Option<String>,
    },
    #[error("run directory {0} already holds a manifest; resume it or choose another run id")]
    RunExists(PathBuf),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("pipeline I/O: {0}")]
    Io(#[from] io::Error),
}

/// Per-bank switches and the no-memory ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySettings {
    pub enable_character_bank: bool,
    pub enable_prop_bank: bool,
    pub enable_background_bank: bool,
    /// Every entity is regenerated per shot with the shot index as seed and
    /// nothing is stored.
    pub ablation_no_memory: bool,
}

impl Default for MemorySettings {
    fn default() -> Self {
        Self {
            enable_character_bank: true,
            enable_prop_bank: true,
            enable_background_bank: true,
            ablation_no_memory: false,
        }
    }
}

impl MemorySettings {
    pub fn bank_enabled(&self, category: EntityCategory) -> bool {
        !self.ablation_no_memory
            && match category {
                EntityCategory::Character => self.enable_character_bank,
                EntityCategory::Prop => self.enable_prop_bank,
                EntityCategory::Background => self.enable_background_bank,
            }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub output_root: PathBuf,
    /// Defaults to `run-` plus a digest of the input.
    pub run_id: Option<String>,
    /// Defaults to `<run dir>/memory`.
    pub memory_root: Option<PathBuf>,
    /// Start from whatever bank already exists at `memory_root`. Without it
    /// a non-empty bank root is an error.
    pub warm_start: bool,
    pub memory: MemorySettings,
    /// Echoed into the manifest only.
    pub profile: String,
    /// Effective settings echoed into the manifest (never secret values).
    pub echo: Option<serde_json::Value>,
    pub prompts: PromptSet,
    pub banned: BannedTerms,
}

impl RunConfig {
    pub fn new(output_root: impl Into<PathBuf>) -> Self {
        Self {
            output_root: output_root.into(),
            run_id: None,
            memory_root: None,
            warm_start: false,
            memory: MemorySettings::default(),
            profile: "mock".into(),
            echo: None,
            prompts: PromptSet::default(),
            banned: BannedTerms::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotEntry {
    pub index: u32,
    pub status: ShotStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<ShotRecord>,
    /// Bank state right after this shot completed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_snapshot: Option<BankSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<CallRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub run_id: String,
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub memory: MemorySettings,
    /// Bank root, relative to the run directory when it lies inside it.
    pub memory_root: PathBuf,
    pub synopsis: Synopsis,
    pub storyboard: Storyboard,
    pub plan_attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub planning_calls: Vec<CallRecord>,
    /// Bank state before the first shot.
    pub initial_bank_snapshot: BankSnapshot,
    pub shots: Vec<ShotEntry>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| PipelineError::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(PipelineError::Manifest {
                path: path.to_path_buf(),
                message: format!("unsupported format {:?}", manifest.format),
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)
    }

    pub fn is_complete(&self) -> bool {
        self.shots.iter().all(|s| s.status == ShotStatus::Done)
    }

    pub fn records(&self) -> impl Iterator<Item = &ShotRecord> {
        self.shots.iter().filter_map(|s| s.record.as_ref())
    }

    /// The final video: per-shot frame sequences in shot order.
    pub fn videos(&self) -> Vec<&AssetRef> {
        self.records().map(|r| &r.video).collect()
    }

    pub fn memory_root_in(&self, run_dir: &Path) -> PathBuf {
        if self.memory_root.is_absolute() {
            self.memory_root.clone()
        } else {
            run_dir.join(&self.memory_root)
        }
    }
}

pub fn default_run_id(seed_text: &str) -> String {
    format!("run-{}", fnv1a64_hex8(seed_text.as_bytes()))
}

pub fn run_dir(config: &RunConfig, run_id: &str) -> PathBuf {
    config.output_root.join(run_id)
}

/// Plans the synopsis with the text backend and executes every shot.
pub fn run(
    synopsis: &Synopsis,
    config: &RunConfig,
    backends: &Backends,
    matcher: &dyn SemanticMatcher,
) -> Result<RunManifest, PipelineError> {
    let plan = storyboard_plan(synopsis, backends.text.as_ref(), &config.prompts)
        .map_err(PipelineError::Planning)?;
    let planning_calls = backends.take_calls();
    let run_id = config
        .run_id
        .clone()
        .unwrap_or_else(|| default_run_id(&synopsis.text));
    start(plan.storyboard, plan.attempts, planning_calls, run_id, config, backends, matcher)
}

/// Executes an already planned storyboard (no planning call).
pub fn run_storyboard(
    storyboard: &Storyboard,
    config: &RunConfig,
    backends: &Backends,
    matcher: &dyn SemanticMatcher,
) -> Result<RunManifest, PipelineError> {
    let run_id = config
        .run_id
        .clone()
        .unwrap_or_else(|| default_run_id(&storyboard.to_json()));
    start(storyboard.clone(), 0, Vec::new(), run_id, config, backends, matcher)
}

fn start(
    storyboard: Storyboard,
    plan_attempts: u32,
    planning_calls: Vec<CallRecord>,
    run_id: String,
    config: &RunConfig,
    backends: &Backends,
    matcher: &dyn SemanticMatcher,
) -> Result<RunManifest, PipelineError> {
    let dir = run_dir(config, &run_id);
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        return Err(PipelineError::RunExists(dir));
    }
    fs::create_dir_all(&dir)?;
    let memory_root = config
        .memory_root
        .clone()
        .unwrap_or_else(|| dir.join(DEFAULT_MEMORY_DIR));

    let bank = if config.warm_start {
        MemoryBank::load(&memory_root)?
    } else {
        let existing = MemoryBank::load(&memory_root)?;
        if !existing.is_empty() {
            return Err(PipelineError::Manifest {
                path: memory_root,
                message: "bank root is not empty; enable warm start to reuse it".into(),
            });
        }
        existing
    };
    bank.save(&memory_root)?;

    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        run_id,
        profile: config.profile.clone(),
        config: config.echo.clone(),
        memory: config.memory,
        memory_root: memory_root
            .strip_prefix(&dir)
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| memory_root.clone()),
        synopsis: storyboard.synopsis.clone(),
        plan_attempts,
        planning_calls,
        initial_bank_snapshot: MemoryBank::index_digests(&memory_root)?,
        shots: storyboard
            .shots
            .iter()
            .map(|s| ShotEntry {
                index: s.index,
                status: ShotStatus::Pending,
                record: None,
                bank_snapshot: None,
                error: None,
                calls: Vec::new(),
            })
            .collect(),
        storyboard,
    };
    manifest.save(&manifest_path)?;
    execute(manifest, &dir, &memory_root, bank, config, backends, matcher)
}

/// Continues a run from its first unfinished shot, using the persisted bank.
/// Settings come from the manifest; `config` supplies prompts, banned terms
/// and an optional bank-root override.
pub fn resume(
    manifest_path: &Path,
    config: &RunConfig,
    backends: &Backends,
    matcher: &dyn SemanticMatcher,
) -> Result<RunManifest, PipelineError> {
    let mut manifest = RunManifest::load(manifest_path)?;
    if manifest.is_complete() {
        return Ok(manifest);
    }
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let memory_root = config
        .memory_root
        .clone()
        .unwrap_or_else(|| manifest.memory_root_in(&dir));

    let expected = manifest
        .shots
        .iter()
        .take_while(|s| s.status == ShotStatus::Done)
        .last()
        .and_then(|s| s.bank_snapshot.clone())
        .unwrap_or_else(|| manifest.initial_bank_snapshot.clone());
    let actual = MemoryBank::index_digests(&memory_root)?;
    for (store, want) in &expected {
        let got = actual.get(store).cloned().flatten();
        if *want != got {
            return Err(PipelineError::SnapshotMismatch {
                store: store.clone(),
                expected: want.clone(),
                actual: got,
            });
        }
    }
    let bank = MemoryBank::load(&memory_root)?;
    for shot in manifest.shots.iter_mut().filter(|s| s.status != ShotStatus::Done) {
        shot.status = ShotStatus::Pending;
        shot.error = None;
        shot.calls.clear();
    }
    execute(manifest, &dir, &memory_root, bank, config, backends, matcher)
}

fn execute(
    mut manifest: RunManifest,
    dir: &Path,
    memory_root: &Path,
    mut bank: MemoryBank,
    config: &RunConfig,
    backends: &Backends,
    matcher: &dyn SemanticMatcher,
) -> Result<RunManifest, PipelineError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let settings = manifest.memory;
    let pending: Vec<usize> = (0..manifest.shots.len())
        .filter(|&i| manifest.shots[i].status != ShotStatus::Done)
        .collect();
    for pos in pending {
        let shot = manifest.storyboard.shots[pos].clone();
        let ctx = ShotContext {
            shot: &shot,
            run_dir: dir,
            memory_root,
            settings,
            config,
            backends,
            matcher,
        };
        let outcome = ctx.process(&mut bank);
        let calls = backends.take_calls();
        let entry = &mut manifest.shots[pos];
        entry.calls = calls;
        match outcome {
            Ok(record) => {
                bank.save(memory_root)?;
                entry.status = ShotStatus::Done;
                entry.record = Some(record);
                entry.bank_snapshot = Some(MemoryBank::index_digests(memory_root)?);
                manifest.save(&manifest_path)?;
                log::info!("shot {} done", shot.index);
            }
            Err(message) => {
                entry.status = ShotStatus::Failed;
                entry.error = Some(message.clone());
                manifest.save(&manifest_path)?;
                // The persisted bank stays at the last completed shot.
                log::error!("shot {} failed: {message}", shot.index);
                return Err(PipelineError::ShotFailed {
                    shot: shot.index,
                    message,
                    manifest: Box::new(manifest),
                });
            }
        }
    }
    Ok(manifest)
}

struct ShotContext<'a> {
    shot: &'a ShotDescription,
    run_dir: &'a Path,
    memory_root: &'a Path,
    settings: MemorySettings,
    config: &'a RunConfig,
    backends: &'a Backends,
    matcher: &'a dyn SemanticMatcher,
}

impl ShotContext<'_> {
    fn shot_dir(&self) -> PathBuf {
        self.run_dir.join("shots").join(self.shot.index.to_string())
    }

    fn process(&self, bank: &mut MemoryBank) -> Result<ShotRecord, String> {
        let shot = self.shot;
        let text = self.backends.text.as_ref();
        let analysis =
            memory_analyze_shot(shot, text, &self.config.prompts).map_err(|e| e.to_string())?;
        let mut warnings = analysis.warnings.clone();

        let mut resolved = Vec::with_capacity(analysis.entities.len());
        for spec in &analysis.entities {
            let (asset, provenance) = self.resolve(bank, spec).map_err(|e| e.to_string())?;
            resolved.push((spec.clone(), asset, provenance));
        }

        let refs: Vec<(EntitySpec, AssetRef)> = resolved
            .iter()
            .map(|(s, a, _)| (s.clone(), a.clone()))
            .collect();
        let keyframe_req = build_keyframe_request(shot, &refs, &self.config.banned)
            .map_err(|e| e.to_string())?;
        warnings.extend(keyframe_req.warnings.iter().cloned());
        let keyframe = self
            .backends
            .image
            .generate(&ImageRequest {
                purpose: ImagePurpose::Keyframe,
                prompt: keyframe_req.prompt.clone(),
                references: keyframe_req.references.clone(),
                seed: None,
                output: self.shot_dir().join("keyframe.png"),
            })
            .map_err(|e| format!("keyframe generation: {e}"))?;

        let video_prompt =
            build_video_prompt(shot, Some(text), &self.config.prompts, &self.config.banned);
        warnings.extend(video_prompt.warnings.iter().cloned());
        let video = self
            .backends
            .video
            .animate(&VideoRequest {
                keyframe: keyframe.clone(),
                prompt: video_prompt.text.clone(),
                output_dir: self.shot_dir().join("video"),
            })
            .map_err(|e| format!("video generation: {e}"))?;

        let record = ShotRecord {
            shot: shot.clone(),
            resolved_entities: resolved
                .into_iter()
                .map(|(entity, asset, provenance)| ResolvedEntity {
                    entity,
                    asset: asset.relative_to(self.run_dir),
                    provenance,
                })
                .collect(),
            keyframe_prompt: keyframe_req.prompt,
            keyframe: keyframe.relative_to(self.run_dir),
            video_prompt: video_prompt.text,
            video: video.relative_to(self.run_dir),
            warnings,
        };
        record.validate()?;
        Ok(record)
    }

    fn resolve(
        &self,
        bank: &mut MemoryBank,
        spec: &EntitySpec,
    ) -> Result<(AssetRef, Provenance), MemoryError> {
        if self.settings.bank_enabled(spec.category) {
            let generator = ImageReferenceGenerator {
                image: self.backends.image.as_ref(),
                output_dir: None,
                memory_root: self.memory_root,
                seed: None,
            };
            return bank.retrieve_or_generate(spec, self.shot.index, self.matcher, &generator);
        }
        // Bypassing the bank: fresh, shot-salted generation, nothing stored.
        let generator = ImageReferenceGenerator {
            image: self.backends.image.as_ref(),
            output_dir: Some(self.shot_dir().join("refs")),
            memory_root: self.memory_root,
            seed: Some(u64::from(self.shot.index)),
        };
        let asset = crate::memory::generate_with_retries(&generator, spec, &[], self.shot.index)?;
        Ok((asset, Provenance::Generated))
    }
}

/// Creates reference images through an [`ImageBackend`], conditioning on the
/// entity's earlier references.
pub struct ImageReferenceGenerator<'a> {
    pub image: &'a dyn ImageBackend,
    /// Where to write; `None` writes straight into the bank's image folder.
    pub output_dir: Option<PathBuf>,
    pub memory_root: &'a Path,
    pub seed: Option<u64>,
}

impl ReferenceGenerator for ImageReferenceGenerator<'_> {
    fn generate(
        &self,
        spec: &EntitySpec,
        history: &[MemoryEntry],
        _shot: u32,
    ) -> Result<AssetRef, GenerationError> {
        let key = spec.key();
        let output = match &self.output_dir {
            Some(dir) => dir.join(format!("{}-{}", spec.category, image_file_name(&key))),
            None => MemoryBank::image_path(self.memory_root, spec.category, &key),
        };
        let references = history
            .iter()
            .map(|e| ReferenceImage {
                name: e.entity.name.clone(),
                category: e.entity.category,
                asset: e.reference.clone(),
            })
            .collect();
        self.image
            .generate(&ImageRequest {
                purpose: ImagePurpose::Reference(spec.category),
                prompt: spec.describe(),
                references,
                seed: self.seed,
                output,
            })
            .map_err(|e| GenerationError {
                attempts: 1,
                message: e.to_string(),
            })
    }
}
