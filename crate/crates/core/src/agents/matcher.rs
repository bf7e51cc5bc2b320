use std::collections::BTreeMap;

use serde_json::Value;

use super::template::MEMORY_MATCH;
use super::{extract_payload, reprompt, PromptSet, AGENT_ATTEMPTS};
use crate::backends::{TextBackend, TextRequest};
use crate::domain::EntitySpec;
use crate::memory::{MatchDecision, MatcherError, MemoryEntry, SemanticMatcher};

/// Asks the text model whether a stored entry can stand in for a query.
pub struct LlmMatcher<'a> {
    llm: &'a dyn TextBackend,
    prompts: PromptSet,
}

impl<'a> LlmMatcher<'a> {
    pub fn new(llm: &'a dyn TextBackend, prompts: PromptSet) -> Self {
        Self { llm, prompts }
    }
}

fn parse_verdict(payload: &str) -> Option<bool> {
    if let Ok(v) = serde_json::from_str::<Value>(payload) {
        return match v {
            Value::Bool(b) => Some(b),
            Value::Object(o) => o.get("match").and_then(Value::as_bool),
            _ => None,
        };
    }
    let first = payload
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())?
        .to_lowercase();
    match first.as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

impl SemanticMatcher for LlmMatcher<'_> {
    fn judge(
        &self,
        query: &EntitySpec,
        candidate: &MemoryEntry,
    ) -> Result<MatchDecision, MatcherError> {
        let mut bindings = BTreeMap::new();
        bindings.insert("query", query.describe());
        bindings.insert("candidate", candidate.entity.describe());
        let base = self
            .prompts
            .render(MEMORY_MATCH, &bindings)
            .map_err(|e| MatcherError(e.to_string()))?;
        let mut prompt = base.clone();
        for _ in 0..AGENT_ATTEMPTS {
            let request = TextRequest::new(MEMORY_MATCH, Some(candidate.created_at_shot), prompt.clone());
            let response = self
                .llm
                .complete(&request)
                .map_err(|e| MatcherError(e.to_string()))?;
            match parse_verdict(extract_payload(&response)) {
                Some(true) => {
                    return Ok(MatchDecision::accept(&candidate.key, "judged equivalent by the text model"))
                }
                Some(false) => return Ok(MatchDecision::reject("judged different by the text model")),
                None => prompt = reprompt(&base, "expected {\"match\": true} or {\"match\": false}"),
            }
        }
        Err(MatcherError(format!(
            "no usable verdict after {AGENT_ATTEMPTS} attempts"
        )))
    }
}
