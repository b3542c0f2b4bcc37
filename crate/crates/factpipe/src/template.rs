//! Decomposition prompt templates.
//!
//! Templates are data files, not code, so instruction variants (taxonomy
//! prompts, few-shot baselines, domain-adapted copies) are all runnable from
//! the same binary. A file starts with header lines:
//!
//! ```text
//! #name: medscore
//! #zero_claim_marker: No verifiable claim
//! #system: optional one-line system prompt
//! ```
//!
//! Everything after the headers (minus one optional separating blank line) is
//! the body. The body must contain the `{sentence}` placeholder and may use
//! `{response_context}` and `{question_context}`, each at most once.

use crate::hashing::sha256_hex;
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const PLACEHOLDER_SENTENCE: &str = "{sentence}";
pub const PLACEHOLDER_RESPONSE_CONTEXT: &str = "{response_context}";
pub const PLACEHOLDER_QUESTION_CONTEXT: &str = "{question_context}";

/// Taxonomy-instruction decomposition template shipped with the binary.
pub const MEDSCORE_TEMPLATE: &str = include_str!("../templates/medscore.txt");
/// Plain few-shot decomposition template shipped with the binary.
pub const FACTSCORE_TEMPLATE: &str = include_str!("../templates/factscore.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template body is missing the {{sentence}} placeholder")]
    MissingSentencePlaceholder,
    #[error("placeholder {0} appears more than once")]
    DuplicatePlaceholder(&'static str),
    #[error("zero_claim_marker must be non-empty")]
    EmptyMarker,
    #[error("template file has no body")]
    EmptyBody,
    #[error("cannot read template: {0}")]
    Unreadable(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdaptError {
    #[error("phrase {phrase:?} occurs {count} times; domain adaptation requires exactly one occurrence")]
    OccurrenceCount { phrase: String, count: usize },
}

/// A parsed decomposition prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub system_text: Option<String>,
    pub body_text: String,
    pub zero_claim_marker: String,
    /// Digest of the source text this template was parsed from, for manifest
    /// pinning and drift detection.
    digest: String,
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, &self.digest[..12])
    }
}

impl PromptTemplate {
    /// Parse template text (see module docs for the format).
    pub fn parse(source: &str) -> Result<PromptTemplate, TemplateError> {
        let mut name = String::from("unnamed");
        let mut marker = String::from("No verifiable claim");
        let mut system_text = None;
        let mut body_start = 0;
        for line in source.split_inclusive('\n') {
            let trimmed = line.trim_end_matches('\n');
            if let Some(v) = trimmed.strip_prefix("#name:") {
                name = v.trim().to_string();
            } else if let Some(v) = trimmed.strip_prefix("#zero_claim_marker:") {
                marker = v.trim().to_string();
            } else if let Some(v) = trimmed.strip_prefix("#system:") {
                system_text = Some(v.trim().to_string());
            } else {
                break;
            }
            body_start += line.len();
        }
        let mut body = &source[body_start..];
        if let Some(rest) = body.strip_prefix('\n') {
            body = rest;
        }
        let body_text = body.trim_end_matches('\n').to_string();

        let template = PromptTemplate {
            name,
            system_text,
            body_text,
            zero_claim_marker: marker,
            digest: sha256_hex(source.as_bytes()),
        };
        template.validate()?;
        Ok(template)
    }

    /// Load a template from a file path.
    pub fn from_file(path: &Path) -> Result<PromptTemplate, TemplateError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Unreadable(format!("{}: {e}", path.display())))?;
        Self::parse(&source)
    }

    /// Look up a template shipped with the binary by name.
    pub fn builtin(name: &str) -> Option<Result<PromptTemplate, TemplateError>> {
        match name {
            "medscore" => Some(Self::parse(MEDSCORE_TEMPLATE)),
            "factscore" => Some(Self::parse(FACTSCORE_TEMPLATE)),
            _ => None,
        }
    }

    /// Resolve a CLI `--template` value: a builtin name or a file path.
    pub fn resolve(spec: &str) -> Result<PromptTemplate, TemplateError> {
        match Self::builtin(spec) {
            Some(result) => result,
            None => Self::from_file(Path::new(spec)),
        }
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    fn validate(&self) -> Result<(), TemplateError> {
        if self.body_text.is_empty() {
            return Err(TemplateError::EmptyBody);
        }
        if self.zero_claim_marker.is_empty() {
            return Err(TemplateError::EmptyMarker);
        }
        if !self.body_text.contains(PLACEHOLDER_SENTENCE) {
            return Err(TemplateError::MissingSentencePlaceholder);
        }
        for placeholder in [
            PLACEHOLDER_SENTENCE,
            PLACEHOLDER_RESPONSE_CONTEXT,
            PLACEHOLDER_QUESTION_CONTEXT,
        ] {
            let count = count_occurrences(&self.body_text, placeholder)
                + self
                    .system_text
                    .as_deref()
                    .map(|s| count_occurrences(s, placeholder))
                    .unwrap_or(0);
            if count > 1 {
                return Err(TemplateError::DuplicatePlaceholder(placeholder));
            }
        }
        Ok(())
    }

    /// Substitute placeholders verbatim: no escaping, no truncation. Values
    /// are inserted in a single pass, so placeholder-looking text inside a
    /// value is never re-substituted.
    pub fn render(
        &self,
        sentence: &str,
        response_context: &str,
        question_context: &str,
    ) -> (Option<String>, String) {
        let fill = |text: &str| {
            substitute(
                text,
                &[
                    (PLACEHOLDER_SENTENCE, sentence),
                    (PLACEHOLDER_RESPONSE_CONTEXT, response_context),
                    (PLACEHOLDER_QUESTION_CONTEXT, question_context),
                ],
            )
        };
        (self.system_text.as_deref().map(fill), fill(&self.body_text))
    }

    /// Produce a domain-adapted copy by replacing a phrase that occurs
    /// exactly once across the system and body text. The copy's name gets an
    /// `-adapted` suffix.
    pub fn adapt_domain(&self, old_phrase: &str, new_phrase: &str) -> Result<PromptTemplate, AdaptError> {
        let count = count_occurrences(&self.body_text, old_phrase)
            + self
                .system_text
                .as_deref()
                .map(|s| count_occurrences(s, old_phrase))
                .unwrap_or(0);
        if count != 1 {
            return Err(AdaptError::OccurrenceCount {
                phrase: old_phrase.to_string(),
                count,
            });
        }
        let mut adapted = self.clone();
        adapted.name = format!("{}-adapted", self.name);
        if adapted.body_text.contains(old_phrase) {
            adapted.body_text = adapted.body_text.replacen(old_phrase, new_phrase, 1);
        } else if let Some(system) = &mut adapted.system_text {
            *system = system.replacen(old_phrase, new_phrase, 1);
        }
        adapted.digest = sha256_hex(adapted.canonical_text().as_bytes());
        Ok(adapted)
    }

    fn canonical_text(&self) -> String {
        let mut out = format!(
            "#name: {}\n#zero_claim_marker: {}\n",
            self.name, self.zero_claim_marker
        );
        if let Some(system) = &self.system_text {
            out.push_str("#system: ");
            out.push_str(system);
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&self.body_text);
        out
    }
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

/// One-pass literal substitution of multiple tokens.
fn substitute(text: &str, replacements: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    'outer: while !rest.is_empty() {
        let mut earliest: Option<(usize, &str, &str)> = None;
        for (token, value) in replacements {
            if let Some(pos) = rest.find(token) {
                if earliest.map(|(p, _, _)| pos < p).unwrap_or(true) {
                    earliest = Some((pos, token, value));
                }
            }
        }
        match earliest {
            Some((pos, token, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + token.len()..];
            }
            None => {
                out.push_str(rest);
                break 'outer;
            }
        }
    }
    out
}
