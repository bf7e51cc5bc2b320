use std::fs;
use std::io;
use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};

const SHIPPED: &str = include_str!("../../assets/banned_terms.txt");

/// Style and camera vocabulary stripped from generation prompts.
#[derive(Debug, Clone)]
pub struct BannedTerms {
    terms: Vec<String>,
    pattern: Option<Regex>,
}

/// Result of filtering one string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filtered {
    pub text: String,
    /// Matched terms, as they appeared in the input.
    pub removed: Vec<String>,
}

impl Default for BannedTerms {
    fn default() -> Self {
        Self::parse(SHIPPED)
    }
}

fn term_pattern(term: &str) -> String {
    let parts: Vec<String> = term
        .split(|c: char| c.is_whitespace() || c == '-')
        .filter(|p| !p.is_empty())
        .map(regex::escape)
        .collect();
    parts.join(r"[\s-]+")
}

fn name_pattern(name: &str) -> Option<Regex> {
    let body = term_pattern(name);
    if body.is_empty() {
        return None;
    }
    RegexBuilder::new(&format!(r"\b{body}\b"))
        .case_insensitive(true)
        .build()
        .ok()
}

impl BannedTerms {
    /// One term per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        let terms: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self::new(terms)
    }

    pub fn new(mut terms: Vec<String>) -> Self {
        terms.retain(|t| !term_pattern(t).is_empty());
        terms.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        terms.dedup();
        let pattern = if terms.is_empty() {
            None
        } else {
            let alternation = terms
                .iter()
                .map(|t| term_pattern(t))
                .collect::<Vec<_>>()
                .join("|");
            Some(
                RegexBuilder::new(&format!(r"\b(?:{alternation})\b"))
                    .case_insensitive(true)
                    .build()
                    .expect("escaped terms form a valid pattern"),
            )
        };
        Self { terms, pattern }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn filter(&self, text: &str) -> Filtered {
        self.filter_protecting(text, &[])
    }

    /// Removes banned terms except where they overlap an occurrence of one
    /// of `protected` (entity names must survive, even a prop called "pan").
    /// Runs to a fixpoint because a removal can join words into a new match.
    pub fn filter_protecting(&self, text: &str, protected: &[&str]) -> Filtered {
        let Some(pattern) = &self.pattern else {
            return Filtered {
                text: text.to_string(),
                removed: Vec::new(),
            };
        };
        let name_res: Vec<Regex> = protected.iter().filter_map(|n| name_pattern(n)).collect();
        let mut current = text.to_string();
        let mut removed = Vec::new();
        loop {
            let shielded: Vec<Range<usize>> = name_res
                .iter()
                .flat_map(|re| re.find_iter(&current).map(|m| m.range()).collect::<Vec<_>>())
                .collect();
            let hits: Vec<Range<usize>> = pattern
                .find_iter(&current)
                .map(|m| m.range())
                .filter(|r| !shielded.iter().any(|s| s.start < r.end && r.start < s.end))
                .collect();
            if hits.is_empty() {
                break;
            }
            let mut next = String::with_capacity(current.len());
            let mut last = 0;
            for r in hits {
                removed.push(current[r.clone()].to_string());
                next.push_str(&current[last..r.start]);
                next.push(' ');
                last = r.end;
            }
            next.push_str(&current[last..]);
            current = tidy(&next);
        }
        if removed.is_empty() {
            current = text.to_string();
        }
        Filtered {
            text: current,
            removed,
        }
    }
}

/// Collapses the gaps a removal leaves behind.
fn tidy(text: &str) -> String {
    static RES: OnceLock<[(Regex, &'static str); 5]> = OnceLock::new();
    let rules = RES.get_or_init(|| {
        [
            (r"[ \t]{2,}", " "),
            (r"[ \t]+([,.;:!?])", "$1"),
            (r"([,;:])(?:\s*[,;:])+", "$1"),
            (r"(?m)^[ \t]*[,;:][ \t]*", ""),
            (r"(?m)[ \t]+$", ""),
        ]
        .map(|(p, r)| (Regex::new(p).expect("static pattern"), r))
    });
    let mut out = text.to_string();
    for (re, replacement) in rules {
        out = re.replace_all(&out, *replacement).into_owned();
    }
    out.trim().to_string()
}
