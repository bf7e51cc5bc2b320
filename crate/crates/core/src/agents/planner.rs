use std::collections::BTreeMap;

use serde_json::Value;

use super::template::STORYBOARD_PLAN;
use super::{extract_payload, reprompt, AgentError, PromptSet, AGENT_ATTEMPTS};
use crate::backends::{TextBackend, TextRequest};
use crate::domain::{parse_shot_list, parse_storyboard, Storyboard, StoryboardError, Synopsis};

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub storyboard: Storyboard,
    pub attempts: u32,
    pub raw_response: String,
}

/// Asks the text model for a storyboard, re-prompting with the parse error
/// until a valid document arrives or the attempts run out.
pub fn storyboard_plan(
    synopsis: &Synopsis,
    llm: &dyn TextBackend,
    prompts: &PromptSet,
) -> Result<PlanOutcome, AgentError> {
    let mut bindings = BTreeMap::new();
    bindings.insert("synopsis", synopsis.text.clone());
    let base = prompts.render(STORYBOARD_PLAN, &bindings)?;
    let mut prompt = base.clone();
    let mut last_response = String::new();
    let mut last_error = String::new();
    for attempt in 1..=AGENT_ATTEMPTS {
        let response = llm.complete(&TextRequest::new(STORYBOARD_PLAN, None, prompt.clone()))?;
        match parse_plan(extract_payload(&response), synopsis) {
            Ok(storyboard) => {
                return Ok(PlanOutcome {
                    storyboard,
                    attempts: attempt,
                    raw_response: response,
                })
            }
            Err(e) => {
                log::warn!("storyboard attempt {attempt} unusable: {e}");
                last_error = e.to_string();
                last_response = response;
                prompt = reprompt(&base, &last_error);
            }
        }
    }
    Err(AgentError::Planning {
        attempts: AGENT_ATTEMPTS,
        message: last_error,
        last_response,
    })
}

/// A full document is accepted as is; a bare shot list gets the input
/// synopsis attached.
fn parse_plan(payload: &str, synopsis: &Synopsis) -> Result<Storyboard, StoryboardError> {
    let has_synopsis = matches!(
        serde_json::from_str::<Value>(payload),
        Ok(Value::Object(ref o)) if o.contains_key("synopsis")
    );
    if has_synopsis {
        parse_storyboard(payload)
    } else {
        Storyboard::new(synopsis.clone(), parse_shot_list(payload)?)
    }
}
