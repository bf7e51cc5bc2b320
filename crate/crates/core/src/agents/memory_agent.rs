use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::template::MEMORY_ANALYZE;
use super::{extract_payload, reprompt, AgentError, PromptSet, AGENT_ATTEMPTS};
use crate::backends::{TextBackend, TextRequest};
use crate::domain::{names_match, AttributeState, EntityCategory, EntitySpec, ShotDescription};

/// The entities one shot needs, with their current states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnalysis {
    pub shot_index: u32,
    /// Characters in listing order, then props, then the background.
    pub entities: Vec<EntitySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub attempts: u32,
}

impl EntityAnalysis {
    pub fn background(&self) -> Option<&EntitySpec> {
        self.entities
            .iter()
            .find(|e| e.category == EntityCategory::Background)
    }
}

/// Asks the text model for the state of every entity in `shot`.
pub fn memory_analyze_shot(
    shot: &ShotDescription,
    llm: &dyn TextBackend,
    prompts: &PromptSet,
) -> Result<EntityAnalysis, AgentError> {
    let list = |names: &[String]| {
        if names.is_empty() {
            "(none)".to_string()
        } else {
            names.join(", ")
        }
    };
    let mut bindings = BTreeMap::new();
    bindings.insert("shot_index", shot.index.to_string());
    bindings.insert(
        "shot_json",
        serde_json::to_string_pretty(shot).expect("shot serializes"),
    );
    bindings.insert("characters", list(&shot.characters));
    bindings.insert("key_props", list(&shot.key_props));
    bindings.insert("background", shot.scene.clone());
    let base = prompts.render(MEMORY_ANALYZE, &bindings)?;

    let mut prompt = base.clone();
    let mut last_error = String::new();
    let mut last_response = String::new();
    for attempt in 1..=AGENT_ATTEMPTS {
        let response = llm.complete(&TextRequest::new(MEMORY_ANALYZE, Some(shot.index), prompt.clone()))?;
        match parse_entities(extract_payload(&response)) {
            Ok(raw) => {
                let (entities, warnings) = reconcile(shot, raw)?;
                return Ok(EntityAnalysis {
                    shot_index: shot.index,
                    entities,
                    warnings,
                    attempts: attempt,
                });
            }
            Err(e) => {
                log::warn!("shot {} analysis attempt {attempt} unusable: {e}", shot.index);
                last_error = e;
                last_response = response;
                prompt = reprompt(&base, &last_error);
            }
        }
    }
    Err(AgentError::Analysis {
        shot: shot.index,
        attempts: AGENT_ATTEMPTS,
        message: last_error,
        last_response,
    })
}

#[derive(Debug, Clone)]
struct RawEntity {
    name: String,
    category: EntityCategory,
    state: AttributeState,
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n)).filter(|v| !v.is_null())
}

fn parse_entities(payload: &str) -> Result<Vec<RawEntity>, String> {
    let value: Value = serde_json::from_str(payload).map_err(|e| format!("invalid JSON: {e}"))?;
    let items = match value {
        Value::Array(items) => items,
        Value::Object(mut o) => match o.remove("entities") {
            Some(Value::Array(items)) => items,
            _ => return Err("expected an `entities` array".into()),
        },
        _ => return Err("expected an object with `entities`".into()),
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let Value::Object(obj) = item else {
                return Err(format!("entities[{i}] is not an object"));
            };
            let name = field(&obj, &["entity_name", "name"])
                .and_then(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| format!("entities[{i}] has no entity_name"))?;
            let category: EntityCategory = field(&obj, &["entity_type", "type", "category"])
                .and_then(Value::as_str)
                .ok_or_else(|| format!("entities[{i}] has no entity_type"))?
                .parse()
                .map_err(|e| format!("entities[{i}]: {e}"))?;
            let summary = field(&obj, &["state_description", "state", "description"])
                .and_then(Value::as_str)
                .unwrap_or("");
            let attributes = match field(&obj, &["attributes"]) {
                None => Vec::new(),
                Some(Value::Object(a)) => a
                    .iter()
                    .filter(|(_, v)| !v.is_null())
                    .map(|(k, v)| {
                        let v = match v {
                            Value::String(s) => s.clone(),
                            other => other.to_string(),
                        };
                        (k.clone(), v)
                    })
                    .collect(),
                Some(_) => return Err(format!("entities[{i}].attributes must be an object")),
            };
            let state = AttributeState::new(attributes, summary)
                .map_err(|e| format!("entities[{i}] ({name}): {e}"))?;
            Ok(RawEntity {
                name: name.to_string(),
                category,
                state,
            })
        })
        .collect()
}

/// Binds parsed entities to the shot's listings: every listed name must be
/// present, unlisted names are dropped, and the background takes the
/// shot's scene label.
fn reconcile(
    shot: &ShotDescription,
    raw: Vec<RawEntity>,
) -> Result<(Vec<EntitySpec>, Vec<String>), AgentError> {
    let inconsistent = |message: String| AgentError::Consistency {
        shot: shot.index,
        message,
    };
    let mut used = vec![false; raw.len()];
    let mut warnings = Vec::new();
    let mut entities = Vec::new();

    let listed = shot
        .characters
        .iter()
        .map(|n| (n, EntityCategory::Character))
        .chain(shot.key_props.iter().map(|n| (n, EntityCategory::Prop)));
    for (name, category) in listed {
        let pos = raw
            .iter()
            .enumerate()
            .position(|(i, r)| !used[i] && names_match(&r.name, name))
            .ok_or_else(|| inconsistent(format!("listed {category} {name:?} is missing")))?;
        used[pos] = true;
        let r = &raw[pos];
        if r.category != category {
            warnings.push(format!(
                "{name} was labeled {} but is listed as a {category}",
                r.category
            ));
        }
        entities.push(spec(shot.index, name, category, r.state.clone())?);
    }

    let backgrounds: Vec<usize> = (0..raw.len())
        .filter(|&i| !used[i] && raw[i].category == EntityCategory::Background)
        .collect();
    if backgrounds.len() > 1 {
        let names: Vec<&str> = backgrounds.iter().map(|&i| raw[i].name.as_str()).collect();
        return Err(inconsistent(format!(
            "expected one background, got {}: {}",
            names.len(),
            names.join(", ")
        )));
    }
    let background_state = match backgrounds.first() {
        Some(&i) => {
            used[i] = true;
            if !names_match(&raw[i].name, &shot.scene) {
                warnings.push(format!(
                    "background {:?} renamed to scene label {:?}",
                    raw[i].name, shot.scene
                ));
            }
            raw[i].state.clone()
        }
        None => {
            warnings.push(format!("no background returned; derived one from scene {:?}", shot.scene));
            derived_background(shot)?
        }
    };
    entities.push(spec(shot.index, &shot.scene, EntityCategory::Background, background_state)?);

    for (i, r) in raw.iter().enumerate() {
        if !used[i] {
            warnings.push(format!("dropped unlisted {} {:?}", r.category, r.name));
        }
    }
    for w in &warnings {
        log::warn!("shot {}: {w}", shot.index);
    }
    Ok((entities, warnings))
}

fn spec(
    shot: u32,
    name: &str,
    category: EntityCategory,
    state: AttributeState,
) -> Result<EntitySpec, AgentError> {
    EntitySpec::new(name, category, state).map_err(|e| AgentError::Consistency {
        shot,
        message: e.to_string(),
    })
}

fn derived_background(shot: &ShotDescription) -> Result<AttributeState, AgentError> {
    let summary = if shot.scene_description.is_empty() {
        shot.scene.clone()
    } else {
        shot.scene_description.clone()
    };
    let attributes: Vec<(&str, &str)> = if shot.environment_info.is_empty() {
        Vec::new()
    } else {
        vec![("environment", shot.environment_info.as_str())]
    };
    AttributeState::new(attributes, summary).map_err(|e| AgentError::Consistency {
        shot: shot.index,
        message: e.to_string(),
    })
}
