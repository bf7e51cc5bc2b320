use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::fnv1a64_hex8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EntityError {
    #[error("entity name is empty")]
    EmptyName,
    #[error("attribute name is empty")]
    EmptyAttributeName,
    #[error("attribute {0:?} appears more than once")]
    DuplicateAttribute(String),
    #[error("state summary is empty")]
    EmptySummary,
    #[error("unknown entity category {0:?}")]
    UnknownCategory(String),
}

/// Which memory store an entity is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityCategory {
    Character,
    Prop,
    Background,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 3] = [
        EntityCategory::Character,
        EntityCategory::Prop,
        EntityCategory::Background,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityCategory::Character => "character",
            EntityCategory::Prop => "prop",
            EntityCategory::Background => "background",
        }
    }

    /// Directory name of the store holding this category.
    pub fn store_name(self) -> &'static str {
        match self {
            EntityCategory::Character => "characters",
            EntityCategory::Prop => "props",
            EntityCategory::Background => "backgrounds",
        }
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityCategory {
    type Err = EntityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "character" | "char" | "characters" | "person" => Ok(EntityCategory::Character),
            "prop" | "props" | "key_prop" | "object" => Ok(EntityCategory::Prop),
            "background" | "bg" | "backgrounds" | "scene" | "location" => {
                Ok(EntityCategory::Background)
            }
            other => Err(EntityError::UnknownCategory(other.to_string())),
        }
    }
}

/// Textual state of an entity in one shot: an open attribute map plus a
/// one-sentence summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeState {
    pub attributes: BTreeMap<String, String>,
    pub summary: String,
}

impl AttributeState {
    /// Builds a state, lowercasing and trimming attribute names.
    pub fn new<I, K, V>(attributes: I, summary: impl Into<String>) -> Result<Self, EntityError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut map = BTreeMap::new();
        for (k, v) in attributes {
            let name = k.as_ref().trim().to_lowercase();
            if name.is_empty() {
                return Err(EntityError::EmptyAttributeName);
            }
            if map.insert(name.clone(), v.as_ref().trim().to_string()).is_some() {
                return Err(EntityError::DuplicateAttribute(name));
            }
        }
        let summary = summary.into().trim().to_string();
        if summary.is_empty() {
            return Err(EntityError::EmptySummary);
        }
        Ok(Self {
            attributes: map,
            summary,
        })
    }

    pub fn validate(&self) -> Result<(), EntityError> {
        for name in self.attributes.keys() {
            if name.is_empty() {
                return Err(EntityError::EmptyAttributeName);
            }
            if *name != name.to_lowercase() {
                return Err(EntityError::DuplicateAttribute(name.clone()));
            }
        }
        if self.summary.trim().is_empty() {
            return Err(EntityError::EmptySummary);
        }
        Ok(())
    }
}

/// Sorted `key=value` lines joined by `\n`; the input to the key digest.
pub fn canonical_attribute_serialization(attributes: &BTreeMap<String, String>) -> String {
    attributes
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `anna_1a2b3c4d`-style key: normalized name plus the low 32 bits of the
/// FNV-1a 64 digest of the canonical attribute serialization.
pub fn canonical_entity_key(name: &str, state: &AttributeState) -> String {
    let digest = fnv1a64_hex8(canonical_attribute_serialization(&state.attributes).as_bytes());
    format!("{}_{digest}", normalize_name(name))
}

pub(crate) fn normalize_name(name: &str) -> String {
    name.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

/// Case-insensitive name comparison used for entity lineages.
pub fn names_match(a: &str, b: &str) -> bool {
    normalize_name(a) == normalize_name(b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub name: String,
    pub category: EntityCategory,
    pub state: AttributeState,
}

impl EntitySpec {
    pub fn new(
        name: impl Into<String>,
        category: EntityCategory,
        state: AttributeState,
    ) -> Result<Self, EntityError> {
        let name = name.into().trim().to_string();
        if name.is_empty() {
            return Err(EntityError::EmptyName);
        }
        Ok(Self {
            name,
            category,
            state,
        })
    }

    pub fn key(&self) -> String {
        canonical_entity_key(&self.name, &self.state)
    }

    /// Text handed to an image generator when a reference has to be created.
    pub fn describe(&self) -> String {
        let mut out = format!("{} ({}): {}", self.name, self.category, self.state.summary);
        if !self.state.attributes.is_empty() {
            let attrs = self
                .state
                .attributes
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect::<Vec<_>>()
                .join("; ");
            out.push_str(" [");
            out.push_str(&attrs);
            out.push(']');
        }
        out
    }
}
