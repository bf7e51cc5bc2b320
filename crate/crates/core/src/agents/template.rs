use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template}: placeholder {{{{{placeholder}}}}} is not bound")]
    Unbound { template: String, placeholder: String },
    #[error("template {template}: unknown placeholder {{{{{placeholder}}}}}")]
    UnknownPlaceholder { template: String, placeholder: String },
    #[error("no template named {0}")]
    Missing(String),
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

/// Text with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let required_placeholders = placeholder_re()
            .captures_iter(&body)
            .map(|c| c[1].to_string())
            .collect();
        Self {
            name: name.into(),
            body,
            required_placeholders,
        }
    }

    /// Substitutes every placeholder in a single pass, so bound values are
    /// never re-expanded. Extra bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        if let Some(missing) = self
            .required_placeholders
            .iter()
            .find(|p| !bindings.contains_key(p.as_str()))
        {
            return Err(TemplateError::Unbound {
                template: self.name.clone(),
                placeholder: missing.clone(),
            });
        }
        Ok(placeholder_re()
            .replace_all(&self.body, |c: &regex::Captures| bindings[&c[1]].clone())
            .into_owned())
    }
}

pub const STORYBOARD_PLAN: &str = "storyboard_plan";
pub const MEMORY_ANALYZE: &str = "memory_analyze";
pub const VIDEO_SUMMARIZE: &str = "video_summarize";
pub const MEMORY_MATCH: &str = "memory_match";

const SHIPPED: [(&str, &str, &[&str]); 4] = [
    (
        STORYBOARD_PLAN,
        include_str!("../../assets/prompts/storyboard_plan.txt"),
        &["synopsis"],
    ),
    (
        MEMORY_ANALYZE,
        include_str!("../../assets/prompts/memory_analyze.txt"),
        &["shot_index", "shot_json", "characters", "key_props", "background"],
    ),
    (
        VIDEO_SUMMARIZE,
        include_str!("../../assets/prompts/video_summarize.txt"),
        &["plot", "max_chars"],
    ),
    (
        MEMORY_MATCH,
        include_str!("../../assets/prompts/memory_match.txt"),
        &["query", "candidate"],
    ),
];

/// The agent templates, keyed by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            templates: SHIPPED
                .iter()
                .map(|(name, body, _)| (name.to_string(), PromptTemplate::new(*name, *body)))
                .collect(),
        }
    }
}

impl PromptSet {
    /// Shipped templates, with any `<name>.txt` found in `dir` taking
    /// precedence. Overrides may drop placeholders but not introduce new ones.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for (name, _, allowed) in SHIPPED {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let body = fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let template = PromptTemplate::new(name, body);
            if let Some(p) = template
                .required_placeholders
                .iter()
                .find(|p| !allowed.contains(&p.as_str()))
            {
                return Err(TemplateError::UnknownPlaceholder {
                    template: name.to_string(),
                    placeholder: p.clone(),
                });
            }
            set.templates.insert(name.to_string(), template);
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::Missing(name.to_string()))
    }

    pub fn render(&self, name: &str, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        self.get(name)?.render(bindings)
    }
}
