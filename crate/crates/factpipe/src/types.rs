//! Core domain types shared by every pipeline stage, their validation rules,
//! and whitespace token counting.
//!
//! All types here are immutable after construction and safe to share across
//! concurrent workers. Validation produces violation descriptions rather than
//! errors: malformed data is a fact about the input, not a failure of the
//! checker.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

/// One QA record: a question, optional context, an optional reference answer,
/// and the response under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub question_context: Option<String>,
    #[serde(default)]
    pub reference_response: Option<String>,
    pub response: String,
    #[serde(default)]
    pub span_annotations: Option<Vec<SpanAnnotation>>,
}

/// A labeled character span of a response (character offsets, end exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub char_start: usize,
    pub char_end: usize,
    pub label: SpanLabel,
}

/// Span categories; `Cause`, `Suggestion`, and `Information` mark text whose
/// claims can be checked against external knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpanLabel {
    Cause,
    Suggestion,
    Experience,
    Question,
    Information,
}

impl SpanLabel {
    /// Whether claims drawn from a span with this label can be verified
    /// against an external source.
    pub fn is_verifiable(self) -> bool {
        matches!(self, SpanLabel::Cause | SpanLabel::Suggestion | SpanLabel::Information)
    }
}

/// One atomic statement decomposed from a sentence of a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub document_id: String,
    pub sentence_index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub taxonomy_labels: BTreeSet<TaxonomyLabel>,
}

impl Claim {
    /// Deterministic claim id, stable across re-runs of the same input.
    pub fn make_id(document_id: &str, sentence_index: usize, ordinal: usize) -> String {
        format!("{document_id}#s{sentence_index}#c{ordinal}")
    }
}

/// Invalid-claim categories plus `Valid`; `Omitted` marks a claim-set-level
/// omission (a response that should have produced claims but did not) and is
/// never legal on an individual claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaxonomyLabel {
    Unverifiable,
    Hallucinated,
    Incomplete,
    IncorrectlyStructured,
    ContextDependent,
    Redundant,
    Omitted,
    Valid,
}

impl TaxonomyLabel {
    pub const ALL: [TaxonomyLabel; 8] = [
        TaxonomyLabel::Valid,
        TaxonomyLabel::Unverifiable,
        TaxonomyLabel::Hallucinated,
        TaxonomyLabel::Incomplete,
        TaxonomyLabel::IncorrectlyStructured,
        TaxonomyLabel::ContextDependent,
        TaxonomyLabel::Redundant,
        TaxonomyLabel::Omitted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaxonomyLabel::Unverifiable => "Unverifiable",
            TaxonomyLabel::Hallucinated => "Hallucinated",
            TaxonomyLabel::Incomplete => "Incomplete",
            TaxonomyLabel::IncorrectlyStructured => "IncorrectlyStructured",
            TaxonomyLabel::ContextDependent => "ContextDependent",
            TaxonomyLabel::Redundant => "Redundant",
            TaxonomyLabel::Omitted => "Omitted",
            TaxonomyLabel::Valid => "Valid",
        }
    }
}

/// Which knowledge source judged a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Internal,
    Reference,
    Retrieval,
}

/// One claim's True/False judgment with its provenance.
///
/// `retrieved_snippet_ids` is present exactly when the strategy is
/// `retrieval`; an unparseable model output always yields `value = false`
/// with `parse_ok = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim_id: String,
    pub value: bool,
    pub strategy: StrategyKind,
    pub parse_ok: bool,
    #[serde(default)]
    pub retrieved_snippet_ids: Option<Vec<String>>,
    pub raw_output: String,
}

impl Verdict {
    /// Violations of the verdict invariants, if any.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        match (self.strategy, &self.retrieved_snippet_ids) {
            (StrategyKind::Retrieval, None) => {
                violations.push("retrieved_snippet_ids: missing for retrieval strategy".into())
            }
            (StrategyKind::Internal | StrategyKind::Reference, Some(_)) => violations.push(
                "retrieved_snippet_ids: present for non-retrieval strategy".into(),
            ),
            _ => {}
        }
        if !self.parse_ok && self.value {
            violations.push("value: must be false when parse_ok is false".into());
        }
        violations
    }
}

/// Run-wide configuration: decoding defaults, endpoint, retrieval depth,
/// concurrency, cache location, and the NLI entailment threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_name: String,
    pub endpoint_url: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub top_k: usize,
    pub concurrency_limit: usize,
    pub cache_dir: PathBuf,
    pub nli_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_name: "gpt-4o-mini".to_string(),
            endpoint_url: String::new(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 256,
            top_k: 10,
            concurrency_limit: 4,
            cache_dir: PathBuf::from("factpipe_cache"),
            nli_threshold: 0.8,
        }
    }
}

impl RunConfig {
    /// Violations of the configuration invariants, if any.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.temperature < 0.0 {
            violations.push("temperature: must be >= 0".into());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            violations.push("top_p: must be in (0, 1]".into());
        }
        if self.max_tokens < 1 {
            violations.push("max_tokens: must be >= 1".into());
        }
        if self.top_k < 1 {
            violations.push("top_k: must be >= 1".into());
        }
        if self.concurrency_limit < 1 {
            violations.push("concurrency_limit: must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.nli_threshold) {
            violations.push("nli_threshold: must be in [0, 1]".into());
        }
        violations
    }
}

/// Check one document against the schema invariants. Returns one description
/// per violation; an empty list means the document is well formed.
pub fn validate_document(doc: &Document) -> Vec<String> {
    let mut violations = Vec::new();
    if doc.id.is_empty() {
        violations.push("id: empty".to_string());
    }
    if doc.response.is_empty() {
        violations.push("response: empty".to_string());
    }
    if let Some(spans) = &doc.span_annotations {
        let response_len = doc.response.chars().count();
        for (i, span) in spans.iter().enumerate() {
            if span.char_start >= span.char_end {
                violations.push(format!(
                    "span_annotations[{i}]: char_start must be less than char_end"
                ));
            }
            if span.char_end > response_len {
                violations.push(format!("span_annotations[{i}]: char_end out of range"));
            }
        }
    }
    violations
}

/// Dataset-level validation: per-document violations plus id uniqueness.
/// Each entry pairs the zero-based document position with a description.
pub fn validate_dataset(docs: &[Document]) -> Vec<(usize, String)> {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for (i, doc) in docs.iter().enumerate() {
        for v in validate_document(doc) {
            violations.push((i, v));
        }
        if !doc.id.is_empty() && !seen.insert(doc.id.as_str()) {
            violations.push((i, format!("id: duplicate '{}'", doc.id)));
        }
    }
    violations
}

/// Claim-level validation (text shape and label legality).
pub fn validate_claim(claim: &Claim) -> Vec<String> {
    let mut violations = Vec::new();
    if claim.text.is_empty() {
        violations.push("text: empty".to_string());
    }
    if claim.text.contains('\n') {
        violations.push("text: contains newline".to_string());
    }
    if claim.taxonomy_labels.contains(&TaxonomyLabel::Omitted) {
        violations.push("taxonomy_labels: Omitted is not legal on an individual claim".into());
    }
    if claim.taxonomy_labels.contains(&TaxonomyLabel::Valid) && claim.taxonomy_labels.len() > 1 {
        violations.push("taxonomy_labels: Valid is mutually exclusive with error labels".into());
    }
    violations
}

/// Number of maximal whitespace-delimited runs of non-whitespace characters.
///
/// This is deliberately a whitespace split rather than a model tokenizer:
/// counts are reproducible without external assets.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Slice a string by character offsets (end exclusive). Offsets past the end
/// are clamped.
pub fn char_slice(text: &str, char_start: usize, char_end: usize) -> String {
    text.chars()
        .skip(char_start)
        .take(char_end.saturating_sub(char_start))
        .collect()
}
