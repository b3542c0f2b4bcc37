//! Claim verification against three knowledge sources: model internal
//! knowledge, a reference document, or retrieved corpus passages.
//!
//! One claim means one LLM call, so caching stays granular and verdicts are
//! independently auditable. Unparseable model output maps to False (with
//! `parse_ok = false` retained) rather than an error, keeping batch runs
//! total.

use crate::client::{ChatRequest, ClientError, LlmClient};
use crate::num::Real;
use crate::retriever::{retrieve_topk, build_context, CorpusIndex, RetrievalQuery};
use crate::types::{Claim, RunConfig, StrategyKind, Verdict};
use thiserror::Error;

/// System prompt for internal-knowledge verification.
pub const INTERNAL_SYSTEM_PROMPT: &str = "You are an assistant who verifies whether a claim from a medical response is True. You should rely exclusively on your own knowledge and always output \"True\" or \"False\" first. If there is not enough context or you are unable to verify the claim, then output \"False\".";

/// User prompt for internal-knowledge verification; the claim is enclosed in
/// braces.
pub fn internal_user_prompt(claim: &str) -> String {
    format!("Using your own knowledge, answer the question.\n\nInput:{{{claim}}} True or False?\n\nOutput:")
}

/// User prompt for context-based (reference or retrieval) verification; the
/// context block and the claim are each enclosed in braces. No system prompt
/// is sent for this strategy.
pub fn context_user_prompt(context: &str, claim: &str) -> String {
    format!("Answer the question based on the given context.\n\n{{{context}}}\n\nInput: {{{claim}}} True or False?\n\nOutput:")
}

/// Which source verifies the claims of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationStrategy {
    Internal,
    Reference,
    Retrieval { k: usize },
}

impl VerificationStrategy {
    pub fn kind(self) -> StrategyKind {
        match self {
            VerificationStrategy::Internal => StrategyKind::Internal,
            VerificationStrategy::Reference => StrategyKind::Reference,
            VerificationStrategy::Retrieval { .. } => StrategyKind::Retrieval,
        }
    }
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("document has no reference_response")]
    MissingReference,
    #[error("retrieval verification needs a non-empty corpus index")]
    EmptyIndex,
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Score(#[from] crate::retriever::ScoreError),
}

/// Parse a verifier's raw output into `(value, parse_ok)`.
///
/// The first maximal alphabetic run decides: `true`/`false` (any case, any
/// leading punctuation or markdown) parse cleanly; anything else counts as
/// False with `parse_ok = false`. Total on arbitrary input.
pub fn parse_verdict(raw_output: &str) -> (bool, bool) {
    let mut token = String::new();
    for c in raw_output.chars() {
        if c.is_alphabetic() {
            token.push(c);
        } else if !token.is_empty() {
            break;
        }
    }
    if token.eq_ignore_ascii_case("true") {
        (true, true)
    } else if token.eq_ignore_ascii_case("false") {
        (false, true)
    } else {
        (false, false)
    }
}

fn chat_request(
    config: &RunConfig,
    system_prompt: Option<String>,
    user_prompt: String,
) -> ChatRequest {
    ChatRequest {
        model_name: config.model_name.clone(),
        system_prompt,
        user_prompt,
        temperature: config.temperature,
        top_p: config.top_p,
        max_tokens: config.max_tokens,
    }
}

/// Judge a claim from the model's own knowledge. The prompt carries no
/// corpus or reference text.
pub async fn verify_internal(
    claim: &Claim,
    client: &LlmClient,
    config: &RunConfig,
) -> Result<Verdict, VerifyError> {
    let request = chat_request(
        config,
        Some(INTERNAL_SYSTEM_PROMPT.to_string()),
        internal_user_prompt(&claim.text),
    );
    let response = client.cached_complete(&request).await?;
    let (value, parse_ok) = parse_verdict(&response.text);
    Ok(Verdict {
        claim_id: claim.id.clone(),
        value,
        strategy: StrategyKind::Internal,
        parse_ok,
        retrieved_snippet_ids: None,
        raw_output: response.text,
    })
}

/// Judge a claim against a reference text supplied as the prompt context.
pub async fn verify_with_reference(
    claim: &Claim,
    reference_text: &str,
    client: &LlmClient,
    config: &RunConfig,
) -> Result<Verdict, VerifyError> {
    if reference_text.is_empty() {
        return Err(VerifyError::MissingReference);
    }
    let request = chat_request(config, None, context_user_prompt(reference_text, &claim.text));
    let response = client.cached_complete(&request).await?;
    let (value, parse_ok) = parse_verdict(&response.text);
    Ok(Verdict {
        claim_id: claim.id.clone(),
        value,
        strategy: StrategyKind::Reference,
        parse_ok,
        retrieved_snippet_ids: None,
        raw_output: response.text,
    })
}

/// Judge a claim against the top-k corpus passages most relevant to it. The
/// verdict records the retrieved snippet ids in rank order. When the claim
/// has a precomputed embedding and the corpus is embedded, ranking is by
/// cosine similarity; otherwise BM25 over the claim text.
pub async fn verify_with_retrieval<R: Real>(
    claim: &Claim,
    index: &CorpusIndex<R>,
    k: usize,
    claim_embedding: Option<&[R]>,
    client: &LlmClient,
    config: &RunConfig,
) -> Result<Verdict, VerifyError> {
    if index.is_empty() {
        return Err(VerifyError::EmptyIndex);
    }
    let query = match claim_embedding {
        Some(embedding) if index.has_embeddings() => RetrievalQuery::Embedding(embedding),
        _ => RetrievalQuery::Text(&claim.text),
    };
    let scored = retrieve_topk(index, &query, k)?;
    let context = build_context(&scored, index);
    let request = chat_request(config, None, context_user_prompt(&context, &claim.text));
    let response = client.cached_complete(&request).await?;
    let (value, parse_ok) = parse_verdict(&response.text);
    Ok(Verdict {
        claim_id: claim.id.clone(),
        value,
        strategy: StrategyKind::Retrieval,
        parse_ok,
        retrieved_snippet_ids: Some(scored.into_iter().map(|s| s.snippet_id).collect()),
        raw_output: response.text,
    })
}
