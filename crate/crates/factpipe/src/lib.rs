//! Decompose-then-verify factuality evaluation for free-form answers.
//!
//! The pipeline splits a response into sentences, prompts an LLM to decompose
//! each sentence into atomic claims, verifies every claim against one of three
//! sources (model internal knowledge, a reference document, or passages
//! retrieved from a local corpus), and aggregates factuality scores, claim
//! statistics, verifiability rates, and taxonomy breakdowns.
//!
//! Each stage reads and writes JSONL so runs are resumable and auditable; all
//! LLM traffic goes through a disk-cached client so a seeded cache replays a
//! full run with zero network calls.

pub mod cli;
pub mod client;
pub mod config;
pub mod decomposer;
pub mod hashing;
pub mod jsonl;
pub mod manifest;
pub mod metrics;
pub mod num;
pub mod report;
pub mod retriever;
pub mod segmenter;
pub mod template;
pub mod types;
pub mod verifier;

/// Scalar type used by the pipeline binary for scores and statistics.
///
/// Scoring and aggregation code is generic over [`num::Real`]; this alias
/// pins the concrete instantiation used end to end by the CLI.
pub type Score = f64;

pub use client::{ChatRequest, ChatResponse, ClientError, LlmClient, RetryPolicy};
pub use decomposer::{parse_claims, DecompositionResult};
pub use retriever::{CorpusIndex, RetrievalQuery, ScoredSnippet, Snippet};
pub use segmenter::{split_sentences, Sentence};
pub use template::PromptTemplate;
pub use types::{
    count_tokens, Claim, Document, RunConfig, SpanAnnotation, SpanLabel, StrategyKind,
    TaxonomyLabel, Verdict,
};
