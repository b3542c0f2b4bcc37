//! Sentence-level claim decomposition: prompt assembly, LLM calls, and
//! parsing of the one-claim-per-line output, including the zero-claim path.

use crate::client::{ChatRequest, ClientError, LlmClient};
use crate::segmenter::{split_sentences, Sentence};
use crate::template::{PromptTemplate, TemplateError};
use crate::types::{Claim, Document, RunConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Claim lines longer than this are dropped as malformed model output.
const MAX_CLAIM_CHARS: usize = 500;

/// Decomposition output for one sentence of one document.
///
/// `zero_claim` holds exactly when `claims` is empty. A `failed` result means
/// the LLM call exhausted its retries; such results are excluded from metrics
/// and surfaced in the stage diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub document_id: String,
    pub sentence_index: usize,
    pub claims: Vec<Claim>,
    pub raw_output: String,
    pub zero_claim: bool,
    pub failed: bool,
    pub dropped_line_count: usize,
}

/// How a document is cut into decomposition units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentationMode {
    /// One unit per sentence (the default).
    Sentences,
    /// A single unit holding the whole response, for datasets whose answers
    /// are one colloquial fragment.
    WholeResponse,
}

/// Build the chat request for one sentence: placeholders substituted
/// verbatim, decoding parameters taken from the run configuration.
pub fn build_decomposition_prompt(
    sentence: &Sentence,
    response_context: &str,
    question_context: &str,
    template: &PromptTemplate,
    config: &RunConfig,
) -> Result<ChatRequest, TemplateError> {
    if !template
        .body_text
        .contains(crate::template::PLACEHOLDER_SENTENCE)
    {
        return Err(TemplateError::MissingSentencePlaceholder);
    }
    let (system_prompt, user_prompt) =
        template.render(&sentence.text, response_context, question_context);
    Ok(ChatRequest {
        model_name: config.model_name.clone(),
        system_prompt,
        user_prompt,
        temperature: config.temperature,
        top_p: config.top_p,
        max_tokens: config.max_tokens,
    })
}

/// Parse raw decomposition output into claim texts.
///
/// Lines are stripped of leading list markers and surrounding whitespace;
/// empty lines are dropped. If the output contains the zero-claim marker
/// anywhere (case-insensitive), the result is empty. Never fails on
/// arbitrary input.
pub fn parse_claims(raw_output: &str, zero_claim_marker: &str) -> Vec<String> {
    parse_claims_with_diagnostics(raw_output, zero_claim_marker).0
}

/// Like [`parse_claims`], also counting lines dropped as malformed (longer
/// than 500 characters).
pub fn parse_claims_with_diagnostics(
    raw_output: &str,
    zero_claim_marker: &str,
) -> (Vec<String>, usize) {
    if !zero_claim_marker.is_empty()
        && raw_output
            .to_lowercase()
            .contains(&zero_claim_marker.to_lowercase())
    {
        return (Vec::new(), 0);
    }
    let mut claims = Vec::new();
    let mut dropped = 0;
    for line in raw_output.lines() {
        let text = strip_list_marker(line.trim());
        if text.is_empty() {
            continue;
        }
        if text.chars().count() > MAX_CLAIM_CHARS {
            dropped += 1;
            continue;
        }
        claims.push(text.to_string());
    }
    (claims, dropped)
}

/// Strip one leading list marker: a bullet (`-`, `*`, `•`, `–`) or a number
/// followed by `.` or `)`.
fn strip_list_marker(line: &str) -> &str {
    let rest = line.trim_start();
    for bullet in ['-', '*', '•', '–'] {
        if let Some(stripped) = rest.strip_prefix(bullet) {
            return stripped.trim_start();
        }
    }
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let after: &str = &rest[digits..];
        if let Some(stripped) = after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
            return stripped.trim_start();
        }
    }
    rest
}

/// Decompose one document. Returns one result per unit in unit order; claim
/// ids are deterministic so re-runs align. Only permanent endpoint errors
/// propagate; exhausted retries yield a `failed` result.
pub async fn decompose_document(
    doc: &Document,
    template: &PromptTemplate,
    config: &RunConfig,
    client: &LlmClient,
    mode: SegmentationMode,
) -> Result<Vec<DecompositionResult>, ClientError> {
    let units: Vec<Sentence> = match mode {
        SegmentationMode::Sentences => split_sentences(&doc.response),
        SegmentationMode::WholeResponse => vec![Sentence {
            index: 0,
            char_start: 0,
            char_end: doc.response.chars().count(),
            text: doc.response.clone(),
        }],
    };
    // The full response is the answer context; the question plus any extra
    // question context is the question context.
    let response_context = doc.response.as_str();
    let question_context = match &doc.question_context {
        Some(extra) if !extra.is_empty() => format!("{} {extra}", doc.question),
        _ => doc.question.clone(),
    };

    let futures = units.iter().map(|sentence| {
        let request = build_decomposition_prompt(
            sentence,
            response_context,
            &question_context,
            template,
            config,
        );
        async move {
            let request = match request {
                Ok(r) => r,
                // Template validity is checked at load time; a failure here
                // is a bug worth surfacing as permanent.
                Err(e) => {
                    return Err(ClientError::Permanent {
                        status: 0,
                        message: e.to_string(),
                    })
                }
            };
            match client.cached_complete(&request).await {
                Ok(response) => Ok(make_result(doc, sentence.index, &response.text, template)),
                Err(e) if e.is_transient_exhausted() => Ok(DecompositionResult {
                    document_id: doc.id.clone(),
                    sentence_index: sentence.index,
                    claims: Vec::new(),
                    raw_output: String::new(),
                    zero_claim: true,
                    failed: true,
                    dropped_line_count: 0,
                }),
                Err(e) => Err(e),
            }
        }
    });
    futures::future::try_join_all(futures).await
}

fn make_result(
    doc: &Document,
    sentence_index: usize,
    raw_output: &str,
    template: &PromptTemplate,
) -> DecompositionResult {
    let (texts, dropped) =
        parse_claims_with_diagnostics(raw_output, &template.zero_claim_marker);
    let claims: Vec<Claim> = texts
        .into_iter()
        .enumerate()
        .map(|(ordinal, text)| Claim {
            id: Claim::make_id(&doc.id, sentence_index, ordinal),
            document_id: doc.id.clone(),
            sentence_index,
            text,
            taxonomy_labels: BTreeSet::new(),
        })
        .collect();
    let zero_claim = claims.is_empty();
    DecompositionResult {
        document_id: doc.id.clone(),
        sentence_index,
        claims,
        raw_output: raw_output.to_string(),
        zero_claim,
        failed: false,
        dropped_line_count: dropped,
    }
}

/// Decompose a dataset. Documents and sentences run concurrently under the
/// client's global in-flight bound; results come back in (document,
/// sentence) order regardless of completion order.
pub async fn decompose_dataset(
    docs: &[Document],
    template: &PromptTemplate,
    config: &RunConfig,
    client: &LlmClient,
    mode: SegmentationMode,
) -> Result<Vec<DecompositionResult>, ClientError> {
    let futures = docs
        .iter()
        .map(|doc| decompose_document(doc, template, config, client, mode));
    let nested = futures::future::try_join_all(futures).await?;
    Ok(nested.into_iter().flatten().collect())
}
