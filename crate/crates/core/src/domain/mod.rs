//! Core data model: synopses, storyboards, entities and per-shot artifacts.

mod asset;
mod entity;
mod storyboard;

pub use asset::{AssetKind, AssetRef};
pub(crate) use asset::list_frames;
pub use entity::{
    canonical_attribute_serialization, canonical_entity_key, AttributeState, EntityCategory,
    EntityError, EntitySpec,
    names_match,
};
pub use storyboard::{
    parse_shot_list, parse_storyboard, ShotDescription, Storyboard, StoryboardError, Synopsis,
};

use serde::{Deserialize, Serialize};

/// Whether an entity reference came out of the bank or was freshly generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Reused,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedEntity {
    pub entity: EntitySpec,
    pub asset: AssetRef,
    pub provenance: Provenance,
}

/// Everything produced for one shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: ShotDescription,
    pub resolved_entities: Vec<ResolvedEntity>,
    pub keyframe_prompt: String,
    pub keyframe: AssetRef,
    pub video_prompt: String,
    pub video: AssetRef,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub const MAX_VIDEO_PROMPT_CHARS: usize = 500;

impl ShotRecord {
    /// Checks the record-level invariants: prompt length and mention coverage.
    pub fn validate(&self) -> Result<(), String> {
        let len = self.video_prompt.chars().count();
        if len > MAX_VIDEO_PROMPT_CHARS {
            return Err(format!(
                "shot {}: video prompt has {len} characters (limit {MAX_VIDEO_PROMPT_CHARS})",
                self.shot.index
            ));
        }
        for mention in self.shot.mentions() {
            let covered = self
                .resolved_entities
                .iter()
                .any(|r| entity::names_match(&r.entity.name, mention));
            if !covered {
                return Err(format!(
                    "shot {}: mention {mention:?} has no resolved entity",
                    self.shot.index
                ));
            }
        }
        Ok(())
    }
}
