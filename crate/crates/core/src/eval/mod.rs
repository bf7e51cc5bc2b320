//! Consistency benchmark harness: case files, middle-frame selection,
//! reference-based cosine scoring normalized by the requested shot count,
//! and suite-level reports.

pub mod embedder;
pub mod report;
pub mod suite;

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedder::{
    serve, EmbedRequest, EmbedResponse, Embedder, EmbedderError, Handshake, MockEmbedder,
    SidecarEmbedder,
};
pub use report::{
    evaluate_suite, load_run_outputs, CaseOutcome, CaseOutput, ReportCell, SubclassAverage,
    SuiteReport,
};
pub use suite::{
    case_path, validate_suite_layout, BenchmarkCase, BenchmarkSuite, LayoutError, Subclass, SuiteMeta,
    FULL_SUITE_CASES, SAMPLES_PER_CELL, SHOT_LENGTHS, SUITE_FILE,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shot has no frames")]
    EmptyShot,
    #[error("feature dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine of an all-zero vector")]
    ZeroVector,
    #[error("cosine needs two detected feature vectors")]
    NotDetected,
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error("evaluation I/O: {0}")]
    Io(#[from] io::Error),
}

/// Which descriptor a metric uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Char,
    Prop,
    Bg,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Char => "char",
            Mode::Prop => "prop",
            Mode::Bg => "bg",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A descriptor; `values` is empty whenever `detected` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub detected: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn detected(values: Vec<f64>) -> Self {
        Self {
            detected: true,
            values,
        }
    }

    pub fn undetected() -> Self {
        Self {
            detected: false,
            values: Vec::new(),
        }
    }
}

/// Zero-based index of the middle frame of `frame_count` frames; the
/// earlier of the two central frames for even counts.
pub fn middle_index(frame_count: usize) -> Result<usize, EvalError> {
    if frame_count == 0 {
        return Err(EvalError::EmptyShot);
    }
    Ok((frame_count - 1) / 2)
}

pub fn middle_frame(frames: &[PathBuf]) -> Result<&Path, EvalError> {
    Ok(&frames[middle_index(frames.len())?])
}

pub fn cosine(u: &FeatureVector, v: &FeatureVector) -> Result<f64, EvalError> {
    if !u.detected || !v.detected {
        return Err(EvalError::NotDetected);
    }
    if u.values.len() != v.values.len() {
        return Err(EvalError::DimensionMismatch {
            left: u.values.len(),
            right: v.values.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.values.iter().zip(&v.values) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Normalized score from the similarities of shots 2..N_out against shot 1.
/// `None` marks a shot whose target was not detected. Entries beyond
/// `required_shots - 1` are discarded, negative similarities count as 0 and
/// the sum is divided by `required_shots - 1`.
pub fn score_from_similarities(required_shots: u32, similarities: &[Option<f64>]) -> f64 {
    if required_shots < 2 {
        return 0.0;
    }
    let denominator = f64::from(required_shots - 1);
    let sum: f64 = similarities
        .iter()
        .take(required_shots as usize - 1)
        .map(|s| s.map_or(0.0, |v| v.max(0.0)))
        .sum();
    sum / denominator
}

/// Score of one case with the raw per-shot evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub subclass: Subclass,
    pub required_shots: u32,
    /// Shots produced, before truncation.
    pub n_out: usize,
    pub score: f64,
    /// Raw cosine of each scored shot (2nd onwards) against the first;
    /// `None` where either side was not detected.
    pub similarities: Vec<Option<f64>>,
    /// Detection flag of every scored shot, the reference first.
    pub detected: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Scores per-shot features (reference first) for a case.
pub fn score_features(case: &BenchmarkCase, features: &[FeatureVector]) -> Result<CaseScore, EvalError> {
    let n_out = features.len();
    if n_out == 0 {
        return Err(EvalError::EmptyShot);
    }
    let mut warnings = Vec::new();
    let keep = n_out.min(case.required_shots as usize);
    if n_out > keep {
        warnings.push(format!(
            "discarded {} shot(s) beyond the {} requested",
            n_out - keep,
            case.required_shots
        ));
    }
    let features = &features[..keep];
    let detected: Vec<bool> = features.iter().map(|f| f.detected).collect();
    let reference = &features[0];
    let mut similarities = Vec::with_capacity(keep.saturating_sub(1));
    if !reference.detected {
        warnings.push("target not detected in the reference shot; score is 0".into());
        similarities.resize(keep - 1, None);
    } else {
        for (i, f) in features.iter().enumerate().skip(1) {
            if f.detected {
                similarities.push(Some(cosine(reference, f)?));
            } else {
                warnings.push(format!("target not detected in shot {}", i + 1));
                similarities.push(None);
            }
        }
    }
    if keep == 1 {
        warnings.push("only one shot produced; nothing to compare".into());
    }
    let score = if reference.detected {
        score_from_similarities(case.required_shots, &similarities)
    } else {
        0.0
    };
    Ok(CaseScore {
        case_id: case.id.clone(),
        subclass: case.subclass,
        required_shots: case.required_shots,
        n_out,
        score,
        similarities,
        detected,
        warnings,
    })
}

/// Embeds the middle frame of every shot in the case's mode and scores the
/// sequence against the first shot.
pub fn sequence_score(
    case: &BenchmarkCase,
    shots: &[Vec<PathBuf>],
    embedder: &dyn Embedder,
) -> Result<CaseScore, EvalError> {
    if shots.is_empty() {
        return Err(EvalError::EmptyShot);
    }
    let mode = case.subclass.mode();
    let prop_text = (mode == Mode::Prop).then(|| case.target.clone());
    let mut features = Vec::with_capacity(shots.len());
    for frames in shots.iter().take(case.required_shots as usize) {
        let frame = middle_frame(frames)?;
        features.push(embedder.embed(&EmbedRequest {
            mode,
            frame_path: frame.to_path_buf(),
            prop_text: prop_text.clone(),
        })?);
    }
    let mut score = score_features(case, &features)?;
    if shots.len() > features.len() {
        score.n_out = shots.len();
        score.warnings.insert(
            0,
            format!(
                "discarded {} shot(s) beyond the {} requested",
                shots.len() - features.len(),
                case.required_shots
            ),
        );
    }
    Ok(score)
}
