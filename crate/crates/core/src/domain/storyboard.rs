use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::entity::normalize_name;

/// Parse and validation failures carry the JSON path of the offending field
/// and, when known, the shot number it belongs to.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoryboardError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("validation error at {path}{}: {message}", shot_suffix(*.shot))]
    Validation {
        path: String,
        shot: Option<u32>,
        message: String,
    },
}

fn shot_suffix(shot: Option<u32>) -> String {
    shot.map(|s| format!(" (shot {s})")).unwrap_or_default()
}

impl StoryboardError {
    fn validation(path: impl Into<String>, shot: Option<u32>, message: impl Into<String>) -> Self {
        StoryboardError::Validation {
            path: path.into(),
            shot,
            message: message.into(),
        }
    }

    pub fn shot(&self) -> Option<u32> {
        match self {
            StoryboardError::Parse { .. } => None,
            StoryboardError::Validation { shot, .. } => *shot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synopsis {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

impl Synopsis {
    pub fn new(text: impl Into<String>, title: Option<String>) -> Result<Self, StoryboardError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(StoryboardError::validation("synopsis.text", None, "synopsis is empty"));
        }
        Ok(Self { text, title })
    }
}

/// One planned shot. Entity mentions are bare names; their attribute states
/// are filled in later by the memory agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotDescription {
    pub index: u32,
    pub scene: String,
    pub scene_description: String,
    pub plot: String,
    pub characters: Vec<String>,
    pub key_props: Vec<String>,
    pub environment_info: String,
    /// Fields the planner emitted that this crate does not interpret.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ShotDescription {
    /// Character then prop mentions.
    pub fn mentions(&self) -> impl Iterator<Item = &str> {
        self.characters
            .iter()
            .chain(self.key_props.iter())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storyboard {
    pub synopsis: Synopsis,
    pub shots: Vec<ShotDescription>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Storyboard {
    pub fn new(synopsis: Synopsis, shots: Vec<ShotDescription>) -> Result<Self, StoryboardError> {
        let shots = validate_shots(shots)?;
        Ok(Self {
            synopsis,
            shots,
            extra: Map::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("storyboard serializes")
    }
}

const INDEX_ALIASES: [&str; 4] = ["index", "shot", "shot_index", "shot_number"];
const TEXT_FIELDS: [&str; 4] = ["scene", "scene_description", "plot", "environment_info"];
const LIST_FIELDS: [&str; 2] = ["characters", "key_props"];

/// Parses a full storyboard document (`synopsis` plus `shots`).
pub fn parse_storyboard(raw: &str) -> Result<Storyboard, StoryboardError> {
    let value = parse_json(raw)?;
    let Value::Object(mut doc) = value else {
        return Err(StoryboardError::validation(
            "$",
            None,
            "storyboard document must be an object with `synopsis` and `shots`",
        ));
    };
    let synopsis = match doc.remove("synopsis") {
        Some(Value::String(text)) => {
            let title = match doc.remove("title") {
                Some(Value::String(t)) => Some(t),
                _ => None,
            };
            Synopsis::new(text, title)?
        }
        Some(v @ Value::Object(_)) => serde_json::from_value::<Synopsis>(v)
            .map_err(|e| StoryboardError::validation("synopsis", None, e.to_string()))
            .and_then(|s| Synopsis::new(s.text, s.title))?,
        Some(_) => {
            return Err(StoryboardError::validation(
                "synopsis",
                None,
                "expected a string or an object",
            ))
        }
        None => return Err(StoryboardError::validation("synopsis", None, "missing field")),
    };
    let shots_value = doc
        .remove("shots")
        .ok_or_else(|| StoryboardError::validation("shots", None, "missing field"))?;
    let shots = shots_from_value(shots_value)?;
    Ok(Storyboard {
        synopsis,
        shots,
        extra: doc,
    })
}

/// Parses the planner's shot list: either a bare array of shots or an object
/// carrying a `shots` (or `storyboard`) array.
pub fn parse_shot_list(raw: &str) -> Result<Vec<ShotDescription>, StoryboardError> {
    let shots_value = match parse_json(raw)? {
        v @ Value::Array(_) => v,
        Value::Object(mut obj) => obj
            .remove("shots")
            .or_else(|| obj.remove("storyboard"))
            .ok_or_else(|| StoryboardError::validation("shots", None, "missing field"))?,
        _ => {
            return Err(StoryboardError::validation(
                "$",
                None,
                "expected an array of shots or an object with `shots`",
            ))
        }
    };
    shots_from_value(shots_value)
}

fn parse_json(raw: &str) -> Result<Value, StoryboardError> {
    serde_json::from_str(raw).map_err(|e| StoryboardError::Parse {
        path: format!("$ (line {}, column {})", e.line(), e.column()),
        message: e.to_string(),
    })
}

fn shots_from_value(value: Value) -> Result<Vec<ShotDescription>, StoryboardError> {
    let Value::Array(items) = value else {
        return Err(StoryboardError::validation("shots", None, "expected an array"));
    };
    let shots = items
        .into_iter()
        .enumerate()
        .map(|(pos, v)| parse_shot(v, pos))
        .collect::<Result<Vec<_>, _>>()?;
    validate_shots(shots)
}

fn parse_shot(value: Value, pos: usize) -> Result<ShotDescription, StoryboardError> {
    let base = format!("shots[{pos}]");
    let Value::Object(mut obj) = value else {
        return Err(StoryboardError::validation(
            base,
            Some(pos as u32 + 1),
            "shot must be an object",
        ));
    };

    let mut index = None;
    for alias in INDEX_ALIASES {
        if let Some(v) = obj.remove(alias) {
            if index.is_none() {
                index = Some(parse_index(&v).ok_or_else(|| {
                    StoryboardError::validation(
                        format!("{base}.{alias}"),
                        Some(pos as u32 + 1),
                        format!("invalid shot index {v}"),
                    )
                })?);
            }
        }
    }
    let index = index.unwrap_or(pos as u32 + 1);
    let shot = Some(index);

    let mut text = |name: &str| -> Result<String, StoryboardError> {
        match obj.remove(name) {
            Some(Value::String(s)) => Ok(s.trim().to_string()),
            Some(Value::Null) | None => Err(StoryboardError::validation(
                format!("{base}.{name}"),
                shot,
                "missing field",
            )),
            Some(other) => Err(StoryboardError::validation(
                format!("{base}.{name}"),
                shot,
                format!("expected a string, found {other}"),
            )),
        }
    };
    let [scene, scene_description, plot, environment_info] = [
        text(TEXT_FIELDS[0])?,
        text(TEXT_FIELDS[1])?,
        text(TEXT_FIELDS[2])?,
        text(TEXT_FIELDS[3])?,
    ];
    for (name, value) in [("scene", &scene), ("plot", &plot)] {
        if value.is_empty() {
            return Err(StoryboardError::validation(
                format!("{base}.{name}"),
                shot,
                "must not be empty",
            ));
        }
    }

    let mut list = |name: &str| -> Result<Vec<String>, StoryboardError> {
        let path = format!("{base}.{name}");
        let items = match obj.remove(name) {
            Some(Value::Array(items)) => items,
            Some(Value::Null) | None => {
                return Err(StoryboardError::validation(path, shot, "missing field"))
            }
            Some(other) => {
                return Err(StoryboardError::validation(
                    path,
                    shot,
                    format!("expected a list of names, found {other}"),
                ))
            }
        };
        let mut names: Vec<String> = Vec::with_capacity(items.len());
        for (i, item) in items.into_iter().enumerate() {
            let name = match item {
                Value::String(s) => s,
                Value::Object(mut o) => match o.remove("name") {
                    Some(Value::String(s)) => s,
                    _ => {
                        return Err(StoryboardError::validation(
                            format!("{path}[{i}]"),
                            shot,
                            "entity object without a `name`",
                        ))
                    }
                },
                other => {
                    return Err(StoryboardError::validation(
                        format!("{path}[{i}]"),
                        shot,
                        format!("expected a name, found {other}"),
                    ))
                }
            };
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(StoryboardError::validation(
                    format!("{path}[{i}]"),
                    shot,
                    "empty entity name",
                ));
            }
            if names.iter().any(|n| normalize_name(n) == normalize_name(&name)) {
                return Err(StoryboardError::validation(
                    format!("{path}[{i}]"),
                    shot,
                    format!("duplicate mention {name:?}"),
                ));
            }
            names.push(name);
        }
        Ok(names)
    };
    let characters = list(LIST_FIELDS[0])?;
    let key_props = list(LIST_FIELDS[1])?;

    Ok(ShotDescription {
        index,
        scene,
        scene_description,
        plot,
        characters,
        key_props,
        environment_info,
        extra: obj,
    })
}

fn parse_index(v: &Value) -> Option<u32> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) => {
            let digits = s
                .trim()
                .trim_start_matches(|c: char| !c.is_ascii_digit())
                .trim();
            digits.parse().ok()
        }
        _ => None,
    }
}

/// Sorts by index and enforces non-emptiness, contiguity from 1, and unique
/// mentions within each shot.
fn validate_shots(mut shots: Vec<ShotDescription>) -> Result<Vec<ShotDescription>, StoryboardError> {
    if shots.is_empty() {
        return Err(StoryboardError::validation("shots", None, "storyboard has no shots"));
    }
    shots.sort_by_key(|s| s.index);
    for (pos, shot) in shots.iter().enumerate() {
        let expected = pos as u32 + 1;
        if shot.index == expected {
            continue;
        }
        if pos > 0 && shot.index == shots[pos - 1].index {
            return Err(StoryboardError::validation(
                "shots",
                Some(shot.index),
                format!("duplicate shot index {}", shot.index),
            ));
        }
        return Err(StoryboardError::validation(
            "shots",
            Some(expected),
            format!(
                "shot indices must be contiguous from 1; shot {expected} is missing (found {})",
                shot.index
            ),
        ));
    }
    for shot in &shots {
        let mut seen: Vec<String> = Vec::new();
        for (field, names) in [("characters", &shot.characters), ("key_props", &shot.key_props)] {
            seen.clear();
            for name in names {
                let norm = normalize_name(name);
                if norm.is_empty() {
                    return Err(StoryboardError::validation(
                        field,
                        Some(shot.index),
                        "empty entity name",
                    ));
                }
                if seen.contains(&norm) {
                    return Err(StoryboardError::validation(
                        field,
                        Some(shot.index),
                        format!("duplicate mention {name:?}"),
                    ));
                }
                seen.push(norm);
            }
        }
    }
    Ok(shots)
}
