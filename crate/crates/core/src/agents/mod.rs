//! The three agents: a planner that turns a synopsis into shots, an entity
//! analyst that describes each shot's entities, and a visualizer that builds
//! keyframe and motion prompts. Each is a prompt template plus a parser over
//! an abstract text backend; none keeps state between shots.

pub mod banned;
pub mod matcher;
pub mod memory_agent;
pub mod planner;
pub mod template;
pub mod visualization;

use thiserror::Error;

use crate::backends::BackendError;

pub use banned::{BannedTerms, Filtered};
pub use matcher::LlmMatcher;
pub use memory_agent::{memory_analyze_shot, EntityAnalysis};
pub use planner::{storyboard_plan, PlanOutcome};
pub use template::{PromptSet, PromptTemplate, TemplateError};
pub use visualization::{build_keyframe_request, build_video_prompt, KeyframeRequest, VideoPrompt};

/// Attempts per agent call when a response cannot be parsed.
pub const AGENT_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("storyboard planning failed after {attempts} attempts: {message}")]
    Planning {
        attempts: u32,
        message: String,
        last_response: String,
    },
    #[error("entity analysis of shot {shot} failed after {attempts} attempts: {message}")]
    Analysis {
        shot: u32,
        attempts: u32,
        message: String,
        last_response: String,
    },
    #[error("entity analysis of shot {shot} is inconsistent with the shot: {message}")]
    Consistency { shot: u32, message: String },
    #[error("shot {shot}: no reference image for {entity}")]
    MissingReference { shot: u32, entity: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Pulls the structured payload out of a model response: the body of the
/// first fenced block, or the whole trimmed response when there is no fence.
pub fn extract_payload(response: &str) -> &str {
    let Some(open) = response.find("```") else {
        return response.trim();
    };
    let after = &response[open + 3..];
    // Skip an info string such as `json` on the opening line.
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => body[..close].trim(),
        None => body.trim(),
    }
}

/// Appends a parse failure to a prompt before re-asking.
pub(crate) fn reprompt(base: &str, error: &str) -> String {
    format!(
        "{base}\n\nYour previous reply could not be used: {error}\nReply again with a single fenced JSON block."
    )
}
