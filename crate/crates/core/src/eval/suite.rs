//! Benchmark case files and the suite directory layout.
//!
//! ```text
//! <suite>/suite.json                      {"full_suite": true}
//! <suite>/<subclass>/<n>/<case>.json      one case per file
//! ```
//!
//! Files and directories whose name starts with `_` or `.` are ignored, so
//! scaffold templates can live next to real cases.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::Mode;

pub const SUITE_FILE: &str = "suite.json";
pub const SHOT_LENGTHS: [u32; 3] = [4, 8, 12];
pub const SAMPLES_PER_CELL: usize = 6;
pub const FULL_SUITE_CASES: usize = 3 * SHOT_LENGTHS.len() * SAMPLES_PER_CELL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subclass {
    CharacterPersistent,
    PropPersistent,
    BackgroundPersistent,
}

impl Subclass {
    pub const ALL: [Subclass; 3] = [
        Subclass::CharacterPersistent,
        Subclass::PropPersistent,
        Subclass::BackgroundPersistent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subclass::CharacterPersistent => "character-persistent",
            Subclass::PropPersistent => "prop-persistent",
            Subclass::BackgroundPersistent => "background-persistent",
        }
    }

    /// The one metric that applies to this subclass.
    pub fn mode(self) -> Mode {
        match self {
            Subclass::CharacterPersistent => Mode::Char,
            Subclass::PropPersistent => Mode::Prop,
            Subclass::BackgroundPersistent => Mode::Bg,
        }
    }
}

impl fmt::Display for Subclass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subclass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subclass::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| format!("unknown subclass {s:?}"))
    }
}

/// One benchmark story: `required_shots` shot texts and the descriptor of
/// the factor that must stay constant (character description, prop phrase or
/// scene label).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub id: String,
    pub subclass: Subclass,
    pub required_shots: u32,
    pub shots: Vec<String>,
    pub target: String,
}

impl BenchmarkCase {
    /// Every invariant violation, empty when the case is well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push("empty case id".to_string());
        }
        if !SHOT_LENGTHS.contains(&self.required_shots) {
            out.push(format!(
                "required_shots is {}, expected one of {SHOT_LENGTHS:?}",
                self.required_shots
            ));
        }
        if self.shots.len() != self.required_shots as usize {
            out.push(format!(
                "required_shots is {} but {} shot texts are given",
                self.required_shots,
                self.shots.len()
            ));
        }
        if let Some(i) = self.shots.iter().position(|s| s.trim().is_empty()) {
            out.push(format!("shot text {} is empty", i + 1));
        }
        if self.target.trim().is_empty() {
            out.push("empty target descriptor".to_string());
        }
        out
    }
}

/// Optional `suite.json` contents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteMeta {
    #[serde(default)]
    pub full_suite: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub meta: SuiteMeta,
    /// Sorted by subclass, shot count, then id.
    pub cases: Vec<BenchmarkCase>,
    /// Every cell of the 3x3 grid holds exactly the expected sample count.
    pub complete: bool,
}

impl BenchmarkSuite {
    pub fn case(&self, id: &str) -> Option<&BenchmarkCase> {
        self.cases.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct LayoutError {
    pub root: PathBuf,
    pub violations: Vec<String>,
}

impl fmt::Display for LayoutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "benchmark suite {} has {} problem(s):",
            self.root.display(),
            self.violations.len()
        )?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

fn skipped(name: &str) -> bool {
    name.starts_with('_') || name.starts_with('.')
}

fn sorted_entries(dir: &Path) -> std::io::Result<Vec<(String, PathBuf, bool)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.push((name, entry.path(), entry.file_type()?.is_dir()));
    }
    out.sort();
    Ok(out)
}

/// Reads a case file, reporting each field problem separately.
fn read_case(path: &Path, rel: &str, violations: &mut Vec<String>) -> Option<BenchmarkCase> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            violations.push(format!("{rel}: unreadable: {e}"));
            return None;
        }
    };
    let value: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            violations.push(format!("{rel}: invalid JSON: {e}"));
            return None;
        }
    };
    let Value::Object(obj) = value else {
        violations.push(format!("{rel}: expected a JSON object"));
        return None;
    };
    let before = violations.len();
    let mut text_field = |name: &str| match obj.get(name) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            violations.push(format!("{rel}: `{name}` must be a string"));
            None
        }
        None => {
            violations.push(format!("{rel}: missing `{name}`"));
            None
        }
    };
    let id = text_field("id");
    let subclass_tag = text_field("subclass");
    let target = text_field("target");
    let subclass = subclass_tag.and_then(|t| match t.parse::<Subclass>() {
        Ok(s) => Some(s),
        Err(e) => {
            violations.push(format!("{rel}: {e}"));
            None
        }
    });
    let required_shots = match obj.get("required_shots").and_then(Value::as_u64) {
        Some(n) => u32::try_from(n).ok(),
        None => {
            violations.push(format!("{rel}: `required_shots` must be a non-negative integer"));
            None
        }
    };
    let shots = match obj.get("shots") {
        Some(Value::Array(items)) if items.iter().all(Value::is_string) => Some(
            items
                .iter()
                .map(|v| v.as_str().unwrap_or_default().to_string())
                .collect::<Vec<_>>(),
        ),
        _ => {
            violations.push(format!("{rel}: `shots` must be an array of strings"));
            None
        }
    };
    if violations.len() > before {
        return None;
    }
    let case = BenchmarkCase {
        id: id?,
        subclass: subclass?,
        required_shots: required_shots?,
        shots: shots?,
        target: target?,
    };
    let problems = case.problems();
    if !problems.is_empty() {
        violations.extend(problems.into_iter().map(|p| format!("{rel} ({}): {p}", case.id)));
        return None;
    }
    Some(case)
}

/// Loads every case under `dir` and checks the layout. All violations are
/// collected before failing.
pub fn validate_suite_layout(dir: &Path) -> Result<BenchmarkSuite, LayoutError> {
    let fail = |violations: Vec<String>| LayoutError {
        root: dir.to_path_buf(),
        violations,
    };
    let mut violations = Vec::new();
    let top = sorted_entries(dir).map_err(|e| fail(vec![format!("cannot read suite directory: {e}")]))?;

    let mut meta = SuiteMeta::default();
    let meta_path = dir.join(SUITE_FILE);
    if meta_path.exists() {
        match fs::read_to_string(&meta_path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<SuiteMeta>(&t).map_err(|e| e.to_string()))
        {
            Ok(m) => meta = m,
            Err(e) => violations.push(format!("{SUITE_FILE}: {e}")),
        }
    }

    let mut cases = Vec::new();
    let mut cells: BTreeMap<(Subclass, u32), usize> = BTreeMap::new();
    for (name, path, is_dir) in top {
        if skipped(&name) || name == SUITE_FILE {
            continue;
        }
        if !is_dir {
            violations.push(format!("{name}: unexpected file at the suite root"));
            continue;
        }
        let subclass = match name.parse::<Subclass>() {
            Ok(s) => s,
            Err(_) => {
                violations.push(format!("{name}/: not a subclass directory"));
                continue;
            }
        };
        let cell_dirs = match sorted_entries(&path) {
            Ok(e) => e,
            Err(e) => {
                violations.push(format!("{name}/: unreadable: {e}"));
                continue;
            }
        };
        for (cell_name, cell_path, cell_is_dir) in cell_dirs {
            if skipped(&cell_name) {
                continue;
            }
            let shots = cell_name.parse::<u32>().ok().filter(|n| SHOT_LENGTHS.contains(n));
            let (true, Some(shots)) = (cell_is_dir, shots) else {
                violations.push(format!(
                    "{name}/{cell_name}: expected a shot-count directory ({SHOT_LENGTHS:?})"
                ));
                continue;
            };
            let files = match sorted_entries(&cell_path) {
                Ok(e) => e,
                Err(e) => {
                    violations.push(format!("{name}/{cell_name}/: unreadable: {e}"));
                    continue;
                }
            };
            for (file, file_path, file_is_dir) in files {
                if skipped(&file) {
                    continue;
                }
                let rel = format!("{name}/{cell_name}/{file}");
                if file_is_dir || !file.ends_with(".json") {
                    violations.push(format!("{rel}: not a .json case file"));
                    continue;
                }
                let Some(case) = read_case(&file_path, &rel, &mut violations) else {
                    continue;
                };
                if case.subclass != subclass || case.required_shots != shots {
                    violations.push(format!(
                        "{rel} ({}): declares {}/{} but sits in {name}/{cell_name}",
                        case.id, case.subclass, case.required_shots
                    ));
                    continue;
                }
                *cells.entry((subclass, shots)).or_default() += 1;
                cases.push(case);
            }
        }
    }

    let mut seen = BTreeSet::new();
    for case in &cases {
        if !seen.insert(case.id.as_str()) {
            violations.push(format!("duplicate case id {:?}", case.id));
        }
    }

    let mut complete = true;
    for subclass in Subclass::ALL {
        for shots in SHOT_LENGTHS {
            let n = cells.get(&(subclass, shots)).copied().unwrap_or(0);
            if n != SAMPLES_PER_CELL {
                complete = false;
                if meta.full_suite {
                    violations.push(format!(
                        "cell {subclass}/{shots} has {n} case(s), expected {SAMPLES_PER_CELL}"
                    ));
                }
            }
        }
    }

    if !violations.is_empty() {
        return Err(fail(violations));
    }
    cases.sort_by(|a, b| {
        (a.subclass, a.required_shots, &a.id).cmp(&(b.subclass, b.required_shots, &b.id))
    });
    Ok(BenchmarkSuite {
        meta,
        cases,
        complete,
    })
}

/// Path of a case file inside a suite directory.
pub fn case_path(dir: &Path, case: &BenchmarkCase) -> PathBuf {
    dir.join(case.subclass.as_str())
        .join(case.required_shots.to_string())
        .join(format!("{}.json", case.id))
}
