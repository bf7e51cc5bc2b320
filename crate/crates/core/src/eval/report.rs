//! Suite evaluation and the (subclass x shot count) report table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{sequence_score, BenchmarkSuite, CaseScore, Embedder, EvalError, Mode, Subclass, SHOT_LENGTHS};
use crate::pipeline::{RunManifest, MANIFEST_FILE};

/// Aggregation of multiple faces into one descriptor, recorded in reports.
pub const FACE_AGGREGATION: &str = "mean, then L2-normalize";

/// What a method produced for one case.
#[derive(Debug, Clone, PartialEq)]
pub enum CaseOutput {
    /// Frame paths per shot, in shot order.
    Shots(Vec<Vec<PathBuf>>),
    Missing(String),
}

/// Reads `<runs>/<case id>/manifest.json` for every case. Only completed
/// shots count as produced output.
pub fn load_run_outputs(runs_dir: &Path, suite: &BenchmarkSuite) -> BTreeMap<String, CaseOutput> {
    suite
        .cases
        .iter()
        .map(|case| {
            let run_dir = runs_dir.join(&case.id);
            (case.id.clone(), read_run(&run_dir))
        })
        .collect()
}

fn read_run(run_dir: &Path) -> CaseOutput {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return CaseOutput::Missing(format!("no run manifest at {}", path.display()));
    }
    let manifest = match RunManifest::load(&path) {
        Ok(m) => m,
        Err(e) => return CaseOutput::Missing(e.to_string()),
    };
    let mut shots = Vec::new();
    for video in manifest.videos() {
        match video.frames(run_dir) {
            Ok(frames) => shots.push(frames),
            Err(e) => return CaseOutput::Missing(format!("{}: {e}", video.path.display())),
        }
    }
    if shots.is_empty() {
        return CaseOutput::Missing("run has no completed shots".into());
    }
    CaseOutput::Shots(shots)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub subclass: Subclass,
    pub required_shots: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<CaseScore>,
    /// Why the case has no score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub subclass: Subclass,
    pub required_shots: u32,
    /// Mean over scored cases; `None` when none were scored.
    pub mean: Option<f64>,
    pub scored: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassAverage {
    pub subclass: Subclass,
    pub mode: Mode,
    /// Mean over every scored case of the subclass.
    pub mean: Option<f64>,
    pub scored: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub method: String,
    pub embedder: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub embedder_metadata: Map<String, Value>,
    pub face_aggregation: String,
    pub complete_suite: bool,
    pub scored: usize,
    pub missing: usize,
    pub cells: Vec<ReportCell>,
    pub averages: Vec<SubclassAverage>,
    pub cases: Vec<CaseOutcome>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Scores every case that has output. Cases without output are listed and
/// left out of all means; embedder failures abort the evaluation.
pub fn evaluate_suite(
    suite: &BenchmarkSuite,
    outputs: &BTreeMap<String, CaseOutput>,
    embedder: &dyn Embedder,
    method: &str,
) -> Result<SuiteReport, EvalError> {
    let mut cases = Vec::with_capacity(suite.cases.len());
    for case in &suite.cases {
        let (score, missing) = match outputs.get(&case.id) {
            None => (None, Some("no output for this case".to_string())),
            Some(CaseOutput::Missing(why)) => (None, Some(why.clone())),
            Some(CaseOutput::Shots(shots)) if shots.is_empty() => {
                (None, Some("no shots produced".to_string()))
            }
            Some(CaseOutput::Shots(shots)) => (Some(sequence_score(case, shots, embedder)?), None),
        };
        cases.push(CaseOutcome {
            case_id: case.id.clone(),
            subclass: case.subclass,
            required_shots: case.required_shots,
            score,
            missing,
        });
    }

    let collect = |pred: &dyn Fn(&CaseOutcome) -> bool| {
        let selected: Vec<&CaseOutcome> = cases.iter().filter(|c| pred(c)).collect();
        let scores: Vec<f64> = selected.iter().filter_map(|c| c.score.as_ref().map(|s| s.score)).collect();
        let missing = selected.len() - scores.len();
        (mean(&scores), scores.len(), missing)
    };
    let mut cells = Vec::new();
    let mut averages = Vec::new();
    for subclass in Subclass::ALL {
        for shots in SHOT_LENGTHS {
            let (mean, scored, missing) =
                collect(&|c| c.subclass == subclass && c.required_shots == shots);
            cells.push(ReportCell {
                subclass,
                required_shots: shots,
                mean,
                scored,
                missing,
            });
        }
        let (mean, scored, missing) = collect(&|c| c.subclass == subclass);
        averages.push(SubclassAverage {
            subclass,
            mode: subclass.mode(),
            mean,
            scored,
            missing,
        });
    }
    let scored = cases.iter().filter(|c| c.score.is_some()).count();
    Ok(SuiteReport {
        method: method.to_string(),
        embedder: embedder.identity(),
        dim: embedder.dim(),
        embedder_metadata: embedder.metadata(),
        face_aggregation: FACE_AGGREGATION.into(),
        complete_suite: suite.complete,
        scored,
        missing: cases.len() - scored,
        cells,
        averages,
        cases,
    })
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn cell(&self, subclass: Subclass, shots: u32) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.subclass == subclass && c.required_shots == shots)
    }

    pub fn average(&self, subclass: Subclass) -> Option<&SubclassAverage> {
        self.averages.iter().find(|a| a.subclass == subclass)
    }

    /// One row per method, four columns (4, 8, 12, Avg) per metric.
    pub fn to_markdown(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let label = |s: Subclass| match s {
            Subclass::CharacterPersistent => "Character",
            Subclass::PropPersistent => "Prop",
            Subclass::BackgroundPersistent => "Background",
        };
        let mut header = String::from("| Method |");
        let mut rule = String::from("|---|");
        let mut row = format!("| {} |", self.method);
        for subclass in Subclass::ALL {
            for shots in SHOT_LENGTHS {
                let _ = write!(header, " {} {shots} |", label(subclass));
                rule.push_str("---:|");
                let _ = write!(row, " {} |", fmt(self.cell(subclass, shots).and_then(|c| c.mean)));
            }
            let _ = write!(header, " {} Avg |", label(subclass));
            rule.push_str("---:|");
            let _ = write!(row, " {} |", fmt(self.average(subclass).and_then(|a| a.mean)));
        }
        let mut out = format!("{header}\n{rule}\n{row}\n\n");
        let _ = writeln!(
            out,
            "Scored {} of {} case(s); embedder {} (dim {}).",
            self.scored,
            self.scored + self.missing,
            self.embedder,
            self.dim
        );
        for case in self.cases.iter().filter(|c| c.missing.is_some()) {
            let _ = writeln!(
                out,
                "- missing {}: {}",
                case.case_id,
                case.missing.as_deref().unwrap_or_default()
            );
        }
        out
    }
}
