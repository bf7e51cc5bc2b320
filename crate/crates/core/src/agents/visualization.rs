use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::template::VIDEO_SUMMARIZE;
use super::{extract_payload, AgentError, BannedTerms, PromptSet};
use crate::backends::{ReferenceImage, TextBackend, TextRequest};
use crate::domain::{
    names_match, AssetRef, EntityCategory, EntitySpec, ShotDescription, MAX_VIDEO_PROMPT_CHARS,
};

/// Prompt and ordered conditioning images for one keyframe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyframeRequest {
    pub prompt: String,
    /// Characters, then props, then the background.
    pub references: Vec<ReferenceImage>,
    pub warnings: Vec<String>,
}

fn category_rank(c: EntityCategory) -> usize {
    EntityCategory::ALL.iter().position(|&x| x == c).unwrap_or(usize::MAX)
}

/// Composes the keyframe prompt from the shot fields and binds each
/// reference image to a position in the prompt.
pub fn build_keyframe_request(
    shot: &ShotDescription,
    refs: &[(EntitySpec, AssetRef)],
    banned: &BannedTerms,
) -> Result<KeyframeRequest, AgentError> {
    let missing = |entity: &str| AgentError::MissingReference {
        shot: shot.index,
        entity: entity.to_string(),
    };
    if refs.is_empty() {
        return Err(missing(&shot.scene));
    }
    let needed = shot
        .characters
        .iter()
        .map(|n| (n.as_str(), EntityCategory::Character))
        .chain(shot.key_props.iter().map(|n| (n.as_str(), EntityCategory::Prop)));
    for (name, category) in needed {
        if !refs
            .iter()
            .any(|(e, _)| e.category == category && names_match(&e.name, name))
        {
            return Err(missing(name));
        }
    }
    for (entity, asset) in refs {
        if !asset.path.is_file() {
            return Err(missing(&entity.name));
        }
    }

    let mut ordered: Vec<&(EntitySpec, AssetRef)> = refs.iter().collect();
    ordered.sort_by_key(|(e, _)| category_rank(e.category));

    let mut prompt = format!("{}.", shot.scene.trim_end_matches('.'));
    if !shot.scene_description.is_empty() {
        let _ = write!(prompt, " {}", shot.scene_description);
    }
    let _ = write!(prompt, "\n{}", shot.plot);
    if !shot.environment_info.is_empty() {
        let _ = write!(prompt, "\nTime and setting: {}", shot.environment_info);
    }
    prompt.push_str("\nReference images, in order:");
    for (i, (entity, _)) in ordered.iter().enumerate() {
        let _ = write!(
            prompt,
            "\n{}. {} ({}): {}",
            i + 1,
            entity.name,
            entity.category,
            entity.state.summary
        );
    }
    prompt.push_str("\nEach entity must match its reference image exactly.");

    let names: Vec<&str> = ordered.iter().map(|(e, _)| e.name.as_str()).collect();
    let filtered = banned.filter_protecting(&prompt, &names);
    let warnings = filtered
        .removed
        .iter()
        .map(|t| format!("removed banned term {t:?} from keyframe prompt"))
        .collect();
    Ok(KeyframeRequest {
        prompt: filtered.text,
        references: ordered
            .into_iter()
            .map(|(e, a)| ReferenceImage {
                name: e.name.clone(),
                category: e.category,
                asset: a.clone(),
            })
            .collect(),
        warnings,
    })
}

/// A motion prompt for the image-to-video model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoPrompt {
    pub text: String,
    pub summarized: bool,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Derives the motion prompt from the plot. Over-long plots get one
/// summarization request; if that fails or is still too long the plot is
/// cut at a word boundary. Never fails.
pub fn build_video_prompt(
    shot: &ShotDescription,
    llm: Option<&dyn TextBackend>,
    prompts: &PromptSet,
    banned: &BannedTerms,
) -> VideoPrompt {
    let protected: Vec<&str> = shot
        .mentions()
        .chain(std::iter::once(shot.scene.as_str()))
        .collect();
    let mut warnings = Vec::new();
    let clean = |text: &str, warnings: &mut Vec<String>| {
        let f = banned.filter_protecting(text, &protected);
        for t in f.removed {
            warnings.push(format!("removed banned term {t:?} from video prompt"));
        }
        f.text
    };

    let mut text = clean(&shot.plot, &mut warnings);
    if text.is_empty() {
        warnings.push("plot empty after filtering; using scene label".into());
        text = shot.scene.clone();
    }
    let len = text.chars().count();
    if len <= MAX_VIDEO_PROMPT_CHARS {
        return VideoPrompt {
            text,
            summarized: false,
            truncated: false,
            warnings,
        };
    }

    if let Some(llm) = llm {
        match summarize(shot, &text, llm, prompts) {
            Ok(summary) => {
                let summary = clean(&summary, &mut warnings);
                let n = summary.chars().count();
                if n > 0 && n <= MAX_VIDEO_PROMPT_CHARS {
                    return VideoPrompt {
                        text: summary,
                        summarized: true,
                        truncated: false,
                        warnings,
                    };
                }
                warnings.push(format!("summary has {n} characters; truncating the plot"));
            }
            Err(e) => warnings.push(format!("summarization failed ({e}); truncating the plot")),
        }
    }
    warnings.push(format!(
        "video prompt truncated from {len} to at most {MAX_VIDEO_PROMPT_CHARS} characters"
    ));
    for w in &warnings {
        log::warn!("shot {}: {w}", shot.index);
    }
    VideoPrompt {
        text: truncate_at_word(&text, MAX_VIDEO_PROMPT_CHARS),
        summarized: false,
        truncated: true,
        warnings,
    }
}

fn summarize(
    shot: &ShotDescription,
    text: &str,
    llm: &dyn TextBackend,
    prompts: &PromptSet,
) -> Result<String, AgentError> {
    let mut bindings = BTreeMap::new();
    bindings.insert("plot", text.to_string());
    bindings.insert("max_chars", MAX_VIDEO_PROMPT_CHARS.to_string());
    let prompt = prompts.render(VIDEO_SUMMARIZE, &bindings)?;
    let response = llm.complete(&TextRequest::new(VIDEO_SUMMARIZE, Some(shot.index), prompt))?;
    Ok(extract_payload(&response).trim_matches('"').trim().to_string())
}

/// Longest prefix of at most `max` characters that does not split a word.
/// A single word longer than `max` is cut hard.
pub fn truncate_at_word(text: &str, max: usize) -> String {
    let Some((cut, next)) = text.char_indices().nth(max) else {
        return text.trim_end().to_string();
    };
    let head = &text[..cut];
    if next.is_whitespace() {
        return head.trim_end().to_string();
    }
    match head.rfind(char::is_whitespace) {
        Some(ws) if !head[..ws].trim().is_empty() => head[..ws].trim_end().to_string(),
        _ => head.to_string(),
    }
}
