//! Command-line pipeline: each stage is independently runnable over JSONL
//! artifacts with file handoffs, so decomposers and verifiers can be mixed
//! without re-running earlier stages.
//!
//! Exit codes: 0 success, 2 permanent endpoint error, 3 input validation
//! failure, 1 anything else.

use crate::client::{ClientError, LlmClient};
use crate::config::{parse_key_values, resolve, ConfigOverrides, ResolvedConfig};
use crate::decomposer::{decompose_dataset, DecompositionResult, SegmentationMode};
use crate::hashing::sha256_file;
use crate::jsonl::{read_jsonl, read_jsonl_numbered, write_jsonl, JsonlError};
use crate::manifest::{check_drift, manifest_path_for, ManifestError, PipelineManifest};
use crate::metrics::{
    claim_stats, cohens_kappa, dataset_factuality, dataset_factuality_micro, nli_entail,
    response_factuality, taxonomy_breakdown, verifiable_rates, AnnotationRecord, MetricsError,
    NliJudgment, Reconciliation, ResponseScore,
};
use crate::report::{render_markdown, DatasetReport};
use crate::retriever::{ingest_corpora, CorpusIndex, IngestError, IngestOptions};
use crate::segmenter::split_sentences;
use crate::template::PromptTemplate;
use crate::types::{
    char_slice, validate_claim, validate_dataset, Claim, Document, RunConfig, TaxonomyLabel,
    Verdict,
};
use crate::verifier::{
    verify_internal, verify_with_reference, verify_with_retrieval, VerifyError,
};
use crate::Score;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "factpipe",
    version,
    about = "Decompose-then-verify factuality evaluation over JSONL artifacts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Decompose dataset responses into claims with a prompt template.
    Decompose(DecomposeArgs),
    /// Judge claims True/False against a knowledge source.
    Verify(VerifyArgs),
    /// Compute factuality scores and claim statistics into a report.
    Score(ScoreArgs),
    /// Compute claim statistics only.
    Stats(StatsArgs),
    /// Judge claim entailment against annotated verifiable spans.
    NliEval(NliEvalArgs),
    /// Cohen's kappa between two annotators.
    Kappa(KappaArgs),
    /// Merge stage outputs and manifests into one markdown report.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model name sent to the endpoint.
    #[arg(long)]
    model: Option<String>,
    /// Chat-completions endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long = "top-p")]
    top_p: Option<f64>,
    #[arg(long = "max-tokens")]
    max_tokens: Option<u32>,
    /// Passages to retrieve per claim.
    #[arg(long = "top-k")]
    top_k: Option<usize>,
    /// Maximum LLM requests in flight.
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long = "cache-dir")]
    cache_dir: Option<PathBuf>,
    /// Entailment score threshold (strict).
    #[arg(long = "nli-threshold")]
    nli_threshold: Option<f64>,
    /// Embeddings endpoint for query embeddings in retrieval mode.
    #[arg(long = "embed-endpoint")]
    embed_endpoint: Option<String>,
}

#[derive(Args)]
pub struct DecomposeArgs {
    /// Dataset JSONL, one document per line.
    #[arg(long)]
    dataset: PathBuf,
    /// Template: a builtin name (medscore, factscore) or a file path.
    #[arg(long)]
    template: String,
    /// Claims JSONL to write.
    #[arg(long)]
    out: PathBuf,
    /// Decompose whole responses instead of sentence by sentence.
    #[arg(long = "whole-response")]
    whole_response: bool,
    /// Proceed even if the output's manifest pinned a different template.
    #[arg(long = "allow-drift")]
    allow_drift: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Internal,
    Reference,
    Retrieval,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Claims JSONL from the decompose stage.
    #[arg(long)]
    claims: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Dataset JSONL (required for the reference strategy).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Corpus JSONL (repeatable; required for the retrieval strategy).
    #[arg(long)]
    corpus: Vec<PathBuf>,
    /// Passages per claim (defaults to the configured top_k).
    #[arg(long)]
    k: Option<usize>,
    /// Precomputed claim embeddings JSONL ({"id", "vector"}).
    #[arg(long = "claim-embeddings")]
    claim_embeddings: Option<PathBuf>,
    /// Verdicts JSONL to write.
    #[arg(long)]
    out: PathBuf,
    /// Proceed even if the output's manifest pinned a different corpus.
    #[arg(long = "allow-drift")]
    allow_drift: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    claims: PathBuf,
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Report JSON to write (a .md twin is written beside it).
    #[arg(long)]
    out: PathBuf,
    /// NLI judgments JSONL for the verifiability block.
    #[arg(long)]
    judgments: Option<PathBuf>,
    /// Annotations JSONL for the taxonomy block.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Decompose diagnostics sidecar, for exact sentence counts.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "annotator")]
    reconciliation: ReconciliationArg,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    claims: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Statistics JSON to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct NliEvalArgs {
    #[arg(long)]
    claims: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Judgments JSONL to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
pub struct KappaArgs {
    /// Annotations JSONL ({"claim_id", "annotator_id", "label"}).
    #[arg(long)]
    annotations: PathBuf,
    /// Annotator ids to compare (default: the exactly two present).
    #[arg(long = "annotator-a")]
    annotator_a: Option<String>,
    #[arg(long = "annotator-b")]
    annotator_b: Option<String>,
    /// Agreement JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    claims: PathBuf,
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    judgments: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "annotator")]
    reconciliation: ReconciliationArg,
    /// Markdown report to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconciliationArg {
    /// A label counts if any annotator assigned it.
    Annotator,
    /// A label counts only if every annotator assigned it.
    Intersection,
}

impl From<ReconciliationArg> for Reconciliation {
    fn from(arg: ReconciliationArg) -> Reconciliation {
        match arg {
            ReconciliationArg::Annotator => Reconciliation::Annotator,
            ReconciliationArg::Intersection => Reconciliation::Intersection,
        }
    }
}

/// Stage failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 3: the inputs are malformed or inconsistent.
    Validation(String),
    /// Exit 2: the endpoint rejected the run.
    Permanent(String),
    /// Exit 1: everything else (IO and friends).
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Permanent(_) => 2,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Permanent(m) | CliError::Other(m) => m,
        }
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> CliError {
        match e {
            JsonlError::Parse { .. } => CliError::Validation(e.to_string()),
            JsonlError::Io { .. } => CliError::Other(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> CliError {
        match e {
            IngestError::Malformed { .. } => CliError::Validation(e.to_string()),
            IngestError::Io { .. } => CliError::Other(e.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> CliError {
        match e {
            ClientError::Permanent { .. } | ClientError::NoEndpoint => {
                CliError::Permanent(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> CliError {
        match e {
            VerifyError::Client(c) => c.into(),
            VerifyError::MissingReference | VerifyError::EmptyIndex => {
                CliError::Validation(e.to_string())
            }
            VerifyError::Score(s) => CliError::Validation(s.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> CliError {
        CliError::Validation(e.to_string())
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> CliError {
        match e {
            ManifestError::Drift { .. } => CliError::Validation(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Other(e.to_string())
    }
}

/// Parse arguments, run the selected stage, and map failures to exit codes.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("factpipe: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Decompose(args) => cmd_decompose(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Score(args) => cmd_score(args),
        Command::Stats(args) => cmd_stats(args),
        Command::NliEval(args) => cmd_nli_eval(args),
        Command::Kappa(args) => cmd_kappa(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<ResolvedConfig, CliError> {
    let file_entries = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
            Some(parse_key_values(&text).map_err(|e| CliError::Validation(e.to_string()))?)
        }
        None => None,
    };
    let overrides = ConfigOverrides {
        model_name: args.model.clone(),
        endpoint_url: args.endpoint.clone(),
        temperature: args.temperature,
        top_p: args.top_p,
        max_tokens: args.max_tokens,
        top_k: args.top_k,
        concurrency_limit: args.concurrency,
        cache_dir: args.cache_dir.clone(),
        nli_threshold: args.nli_threshold,
        embed_endpoint: args.embed_endpoint.clone(),
    };
    let resolved = resolve(file_entries.as_ref(), &overrides)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let violations = resolved.run.validate();
    if !violations.is_empty() {
        return Err(CliError::Validation(format!(
            "config: {}",
            violations.join("; ")
        )));
    }
    Ok(resolved)
}

fn make_client(resolved: &ResolvedConfig) -> LlmClient {
    LlmClient::new(
        &resolved.run.endpoint_url,
        &resolved.run.cache_dir,
        resolved.run.concurrency_limit,
    )
    .with_embed_endpoint(resolved.embed_endpoint.clone())
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

fn load_dataset(path: &Path) -> Result<Vec<Document>, CliError> {
    let numbered: Vec<(usize, Document)> = read_jsonl_numbered(path)?;
    let docs: Vec<Document> = numbered.iter().map(|(_, d)| d.clone()).collect();
    let violations = validate_dataset(&docs);
    if !violations.is_empty() {
        let lines: Vec<String> = violations
            .iter()
            .map(|(i, v)| format!("{} line {}: {v}", path.display(), numbered[*i].0))
            .collect();
        return Err(CliError::Validation(lines.join("\n")));
    }
    Ok(docs)
}

fn load_claims(path: &Path) -> Result<Vec<Claim>, CliError> {
    let numbered: Vec<(usize, Claim)> = read_jsonl_numbered(path)?;
    let mut seen = HashSet::new();
    for (line, claim) in &numbered {
        if let Some(violation) = validate_claim(claim).into_iter().next() {
            return Err(CliError::Validation(format!(
                "{} line {line}: {violation}",
                path.display()
            )));
        }
        if !seen.insert(claim.id.as_str()) {
            return Err(CliError::Validation(format!(
                "{} line {line}: duplicate claim id '{}'",
                path.display(),
                claim.id
            )));
        }
    }
    Ok(numbered.into_iter().map(|(_, c)| c).collect())
}

/// Per-document decomposition diagnostics sidecar.
#[derive(Debug, Serialize, Deserialize)]
struct DocDiagnostics {
    document_id: String,
    unit_count: usize,
    zero_claim_units: Vec<usize>,
    failed_units: Vec<usize>,
    dropped_line_count: usize,
    total_claims: usize,
    zero_claim_response: bool,
}

fn diagnostics_path(out: &Path) -> PathBuf {
    sidecar_path(out, "diag.json")
}

fn failed_path(out: &Path) -> PathBuf {
    sidecar_path(out, "failed.json")
}

fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".into());
    name.push('.');
    name.push_str(suffix);
    out.with_file_name(name)
}

fn cmd_decompose(args: DecomposeArgs) -> Result<(), CliError> {
    let resolved = resolve_config(&args.config)?;
    let docs = load_dataset(&args.dataset)?;
    let template =
        PromptTemplate::resolve(&args.template).map_err(|e| CliError::Validation(e.to_string()))?;
    check_drift(&args.out, Some(template.digest()), None, args.allow_drift)?;

    let client = make_client(&resolved);
    let mode = if args.whole_response {
        SegmentationMode::WholeResponse
    } else {
        SegmentationMode::Sentences
    };
    let results = runtime().block_on(decompose_dataset(
        &docs,
        &template,
        &resolved.run,
        &client,
        mode,
    ))?;

    let mut claims: Vec<Claim> = Vec::new();
    let mut diagnostics: Vec<DocDiagnostics> = Vec::new();
    for doc in &docs {
        let doc_results: Vec<&DecompositionResult> = results
            .iter()
            .filter(|r| r.document_id == doc.id)
            .collect();
        let mut diag = DocDiagnostics {
            document_id: doc.id.clone(),
            unit_count: doc_results.len(),
            zero_claim_units: Vec::new(),
            failed_units: Vec::new(),
            dropped_line_count: 0,
            total_claims: 0,
            zero_claim_response: false,
        };
        for result in &doc_results {
            if result.failed {
                diag.failed_units.push(result.sentence_index);
                continue;
            }
            if result.zero_claim {
                diag.zero_claim_units.push(result.sentence_index);
            }
            diag.dropped_line_count += result.dropped_line_count;
            diag.total_claims += result.claims.len();
            claims.extend(result.claims.iter().cloned());
        }
        diag.zero_claim_response = diag.total_claims == 0;
        if !diag.failed_units.is_empty() {
            eprintln!(
                "warning: document '{}': {} unit(s) failed after retries and are excluded",
                doc.id,
                diag.failed_units.len()
            );
        }
        diagnostics.push(diag);
    }

    write_jsonl(&args.out, &claims)?;
    std::fs::write(
        diagnostics_path(&args.out),
        serde_json::to_string_pretty(&diagnostics).expect("diagnostics serialize"),
    )?;

    let dataset_digest = sha256_file(&args.dataset)?;
    let mut manifest = PipelineManifest::start(
        "decompose",
        &resolved.run,
        Some(template.digest().to_string()),
        None,
        &[dataset_digest],
    );
    manifest.record_output("claims", &args.out);
    manifest.record_output("diagnostics", &diagnostics_path(&args.out));
    manifest.finalize(&args.out)?;
    Ok(())
}

#[derive(Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let resolved = resolve_config(&args.config)?;
    let claims = load_claims(&args.claims)?;
    let k = args.k.unwrap_or(resolved.run.top_k);

    // Strategy prerequisites.
    let references: Option<HashMap<String, String>> = match args.strategy {
        StrategyArg::Reference => {
            let dataset = args.dataset.as_ref().ok_or_else(|| {
                CliError::Validation(
                    "strategy reference requires --dataset with reference_response".into(),
                )
            })?;
            let docs = load_dataset(dataset)?;
            let mut map = HashMap::new();
            let claimed: HashSet<&str> = claims.iter().map(|c| c.document_id.as_str()).collect();
            for doc in &docs {
                match &doc.reference_response {
                    Some(reference) if !reference.is_empty() => {
                        map.insert(doc.id.clone(), reference.clone());
                    }
                    _ if claimed.contains(doc.id.as_str()) => {
                        return Err(CliError::Validation(format!(
                            "document '{}' has no reference_response, required by strategy reference",
                            doc.id
                        )));
                    }
                    _ => {}
                }
            }
            Some(map)
        }
        _ => None,
    };
    let index: Option<CorpusIndex<Score>> = match args.strategy {
        StrategyArg::Retrieval => {
            if args.corpus.is_empty() {
                return Err(CliError::Validation(
                    "strategy retrieval requires at least one --corpus".into(),
                ));
            }
            Some(ingest_corpora(&args.corpus, &IngestOptions::default())?)
        }
        _ => None,
    };
    let corpus_digest = index.as_ref().and_then(|i| i.corpus_digest().map(str::to_string));
    check_drift(&args.out, None, corpus_digest.as_deref(), args.allow_drift)?;

    // Claim embeddings: a sidecar file wins; otherwise an embedding endpoint
    // (if configured) supplies query vectors when the corpus is embedded.
    let mut claim_embeddings: HashMap<String, Vec<Score>> = HashMap::new();
    if let Some(path) = &args.claim_embeddings {
        let rows: Vec<EmbeddingRow> = read_jsonl(path)?;
        for row in rows {
            claim_embeddings.insert(row.id, row.vector);
        }
    }

    let client = make_client(&resolved);
    let rt = runtime();
    let embedded_corpus = index.as_ref().map(|i| i.has_embeddings()).unwrap_or(false);
    if embedded_corpus && claim_embeddings.is_empty() && resolved.embed_endpoint.is_some() {
        for claim in &claims {
            let vector = rt
                .block_on(client.embed(&resolved.run.model_name, &claim.text))
                .map_err(CliError::from)?;
            claim_embeddings.insert(claim.id.clone(), vector);
        }
    }

    let config = &resolved.run;
    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut failed: Vec<String> = Vec::new();
    let outcomes = rt.block_on(async {
        let futures = claims.iter().map(|claim| {
            let references = references.as_ref();
            let index = index.as_ref();
            let claim_embedding = claim_embeddings.get(&claim.id).map(|v| v.as_slice());
            let client = &client;
            async move {
                match args.strategy {
                    StrategyArg::Internal => verify_internal(claim, client, config).await,
                    StrategyArg::Reference => {
                        let reference = references
                            .and_then(|m| m.get(&claim.document_id))
                            .ok_or(VerifyError::MissingReference)?;
                        verify_with_reference(claim, reference, client, config).await
                    }
                    StrategyArg::Retrieval => {
                        let index = index.expect("retrieval strategy built an index");
                        verify_with_retrieval(claim, index, k, claim_embedding, client, config)
                            .await
                    }
                }
            }
        });
        futures::future::join_all(futures).await
    });
    for (claim, outcome) in claims.iter().zip(outcomes) {
        match outcome {
            Ok(verdict) => verdicts.push(verdict),
            Err(VerifyError::Client(e)) if e.is_transient_exhausted() => {
                eprintln!(
                    "warning: claim '{}' failed after retries and is excluded: {e}",
                    claim.id
                );
                failed.push(claim.id.clone());
            }
            Err(e) => return Err(e.into()),
        }
    }
    verdicts.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));

    write_jsonl(&args.out, &verdicts)?;
    std::fs::write(
        failed_path(&args.out),
        serde_json::to_string_pretty(&failed).expect("failed list serializes"),
    )?;

    let claims_digest = sha256_file(&args.claims)?;
    let mut manifest = PipelineManifest::start(
        &format!("verify-{:?}", args.strategy).to_lowercase(),
        config,
        None,
        corpus_digest,
        &[claims_digest],
    );
    manifest.record_output("verdicts", &args.out);
    manifest.record_output("failed", &failed_path(&args.out));
    manifest.finalize(&args.out)?;
    Ok(())
}

/// Rebuild per-sentence decomposition results from persisted claims, for
/// statistics. The diagnostics sidecar gives exact unit counts and failed
/// units; without it, sentence segmentation of the response is used.
fn reconstruct_results(
    claims: &[Claim],
    docs: &[Document],
    diagnostics: Option<&[DocDiagnostics]>,
) -> Vec<DecompositionResult> {
    let mut by_doc: HashMap<&str, BTreeMap<usize, Vec<&Claim>>> = HashMap::new();
    for claim in claims {
        by_doc
            .entry(claim.document_id.as_str())
            .or_default()
            .entry(claim.sentence_index)
            .or_default()
            .push(claim);
    }
    let diag_by_doc: HashMap<&str, &DocDiagnostics> = diagnostics
        .unwrap_or_default()
        .iter()
        .map(|d| (d.document_id.as_str(), d))
        .collect();

    let mut results = Vec::new();
    for doc in docs {
        let claimed = by_doc.get(doc.id.as_str());
        let max_index = claimed
            .and_then(|m| m.keys().next_back().copied())
            .map(|i| i + 1)
            .unwrap_or(0);
        let diag = diag_by_doc.get(doc.id.as_str());
        let unit_count = diag
            .map(|d| d.unit_count)
            .unwrap_or_else(|| split_sentences(&doc.response).len())
            .max(max_index);
        let failed: HashSet<usize> = diag
            .map(|d| d.failed_units.iter().copied().collect())
            .unwrap_or_default();
        for unit in 0..unit_count {
            let unit_claims: Vec<Claim> = claimed
                .and_then(|m| m.get(&unit))
                .map(|v| v.iter().map(|&c| c.clone()).collect())
                .unwrap_or_default();
            results.push(DecompositionResult {
                document_id: doc.id.clone(),
                sentence_index: unit,
                zero_claim: unit_claims.is_empty(),
                claims: unit_claims,
                raw_output: String::new(),
                failed: failed.contains(&unit),
                dropped_line_count: 0,
            });
        }
    }
    results
}

fn load_diagnostics(path: &Path) -> Result<Vec<DocDiagnostics>, CliError> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn check_claim_ids_resolve<'a>(
    referencing: impl Iterator<Item = &'a str>,
    claims: &[Claim],
    what: &str,
) -> Result<(), CliError> {
    let known: HashSet<&str> = claims.iter().map(|c| c.id.as_str()).collect();
    for id in referencing {
        if !known.contains(id) {
            return Err(CliError::Validation(format!(
                "{what} references unknown claim id '{id}'"
            )));
        }
    }
    Ok(())
}

/// Annotation claim ids must resolve, except claim-set-level records (ids
/// ending in `#omitted`), the only place the Omitted label is legal.
fn check_annotations(records: &[AnnotationRecord], claims: &[Claim]) -> Result<(), CliError> {
    let known: HashSet<&str> = claims.iter().map(|c| c.id.as_str()).collect();
    for record in records {
        let synthetic = record.claim_id.ends_with("#omitted");
        if synthetic {
            if record.label != TaxonomyLabel::Omitted {
                return Err(CliError::Validation(format!(
                    "annotation for synthetic record '{}' must use label Omitted",
                    record.claim_id
                )));
            }
            continue;
        }
        if record.label == TaxonomyLabel::Omitted {
            return Err(CliError::Validation(format!(
                "label Omitted is not legal on individual claim '{}'",
                record.claim_id
            )));
        }
        if !known.contains(record.claim_id.as_str()) {
            return Err(CliError::Validation(format!(
                "annotations reference unknown claim id '{}'",
                record.claim_id
            )));
        }
    }
    Ok(())
}

struct ReportInputs {
    report: DatasetReport<Score>,
    scores: Vec<ResponseScore<Score>>,
}

fn build_report(
    claims: &[Claim],
    verdicts: &[Verdict],
    docs: &[Document],
    judgments: Option<&[NliJudgment]>,
    annotations: Option<&[AnnotationRecord]>,
    diagnostics: Option<&[DocDiagnostics]>,
    reconciliation: Reconciliation,
) -> Result<ReportInputs, CliError> {
    check_claim_ids_resolve(verdicts.iter().map(|v| v.claim_id.as_str()), claims, "verdicts")?;
    for verdict in verdicts {
        let violations = verdict.validate();
        if !violations.is_empty() {
            return Err(CliError::Validation(format!(
                "verdict for claim '{}': {}",
                verdict.claim_id,
                violations.join("; ")
            )));
        }
    }
    let claim_doc: HashMap<&str, &str> = claims
        .iter()
        .map(|c| (c.id.as_str(), c.document_id.as_str()))
        .collect();
    let known_docs: HashSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    for claim in claims {
        if !known_docs.contains(claim.document_id.as_str()) {
            return Err(CliError::Validation(format!(
                "claim '{}' references unknown document '{}'",
                claim.id, claim.document_id
            )));
        }
    }

    let mut values_by_doc: HashMap<&str, Vec<bool>> = HashMap::new();
    for verdict in verdicts {
        let doc_id = claim_doc[verdict.claim_id.as_str()];
        values_by_doc.entry(doc_id).or_default().push(verdict.value);
    }
    let scores: Vec<ResponseScore<Score>> = docs
        .iter()
        .map(|doc| {
            response_factuality(
                &doc.id,
                values_by_doc
                    .get(doc.id.as_str())
                    .map(Vec::as_slice)
                    .unwrap_or(&[]),
            )
        })
        .collect();
    let macro_score = dataset_factuality(&scores)?;
    let micro_score = dataset_factuality_micro(&scores)?;

    let results = reconstruct_results(claims, docs, diagnostics);
    let stats = claim_stats::<Score>(&results)?;

    let unparseable = if verdicts.is_empty() {
        0.0
    } else {
        verdicts.iter().filter(|v| !v.parse_ok).count() as Score / verdicts.len() as Score
    };

    let rates = match judgments {
        Some(judgments) => {
            check_claim_ids_resolve(
                judgments.iter().map(|j| j.claim_id.as_str()),
                claims,
                "judgments",
            )?;
            Some(verifiable_rates::<Score>(docs, claims, judgments)?)
        }
        None => None,
    };
    let taxonomy = match annotations {
        Some(records) => {
            check_annotations(records, claims)?;
            Some(taxonomy_breakdown(records, reconciliation))
        }
        None => None,
    };

    Ok(ReportInputs {
        report: DatasetReport {
            dataset_factuality: macro_score,
            dataset_factuality_micro: micro_score,
            claim_stats: stats,
            verifiable_rates: rates,
            taxonomy,
            unparseable_verdict_rate: unparseable,
        },
        scores,
    })
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let claims = load_claims(&args.claims)?;
    let verdicts: Vec<Verdict> = read_jsonl(&args.verdicts)?;
    let docs = load_dataset(&args.dataset)?;
    let judgments: Option<Vec<NliJudgment>> = match &args.judgments {
        Some(path) => Some(read_jsonl(path)?),
        None => None,
    };
    let annotations: Option<Vec<AnnotationRecord>> = match &args.annotations {
        Some(path) => Some(read_jsonl(path)?),
        None => None,
    };
    let diagnostics = match &args.diagnostics {
        Some(path) => Some(load_diagnostics(path)?),
        None => None,
    };
    let inputs = build_report(
        &claims,
        &verdicts,
        &docs,
        judgments.as_deref(),
        annotations.as_deref(),
        diagnostics.as_deref(),
        args.reconciliation.into(),
    )?;

    let json = serde_json::to_string_pretty(&inputs.report).expect("report serializes");
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, json)?;
    let md_path = args.out.with_extension("md");
    std::fs::write(&md_path, render_markdown(&inputs.report, "Factuality report"))?;
    let scores_path = sidecar_path(&args.out, "scores.jsonl");
    write_jsonl(&scores_path, &inputs.scores)?;

    let mut manifest = PipelineManifest::start(
        "score",
        &RunConfig::default(),
        None,
        None,
        &[
            sha256_file(&args.claims)?,
            sha256_file(&args.verdicts)?,
            sha256_file(&args.dataset)?,
        ],
    );
    manifest.record_output("report_json", &args.out);
    manifest.record_output("report_md", &md_path);
    manifest.record_output("response_scores", &scores_path);
    manifest.finalize(&args.out)?;
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    let claims = load_claims(&args.claims)?;
    let docs = load_dataset(&args.dataset)?;
    let diagnostics = match &args.diagnostics {
        Some(path) => Some(load_diagnostics(path)?),
        None => None,
    };
    let known_docs: HashSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    for claim in &claims {
        if !known_docs.contains(claim.document_id.as_str()) {
            return Err(CliError::Validation(format!(
                "claim '{}' references unknown document '{}'",
                claim.id, claim.document_id
            )));
        }
    }
    let results = reconstruct_results(&claims, &docs, diagnostics.as_deref());
    let stats = claim_stats::<Score>(&results)?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&stats).expect("stats serialize"),
    )?;
    std::fs::write(
        args.out.with_extension("md"),
        format!(
            "# Claim statistics\n\n{}",
            crate::report::render_claim_stats(&stats)
        ),
    )?;
    Ok(())
}

fn cmd_nli_eval(args: NliEvalArgs) -> Result<(), CliError> {
    let resolved = resolve_config(&args.config)?;
    let claims = load_claims(&args.claims)?;
    let docs = load_dataset(&args.dataset)?;
    let doc_by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    for claim in &claims {
        if !doc_by_id.contains_key(claim.document_id.as_str()) {
            return Err(CliError::Validation(format!(
                "claim '{}' references unknown document '{}'",
                claim.id, claim.document_id
            )));
        }
    }

    let client = make_client(&resolved);
    let config = &resolved.run;
    let mut pairs = Vec::new();
    for claim in &claims {
        let doc = doc_by_id[claim.document_id.as_str()];
        for span in doc.span_annotations.as_deref().unwrap_or_default() {
            if !span.label.is_verifiable() {
                continue;
            }
            let span_text = char_slice(&doc.response, span.char_start, span.char_end);
            pairs.push((claim, span.label, span_text));
        }
    }
    let judgments: Vec<NliJudgment> = runtime().block_on(async {
        let futures = pairs.iter().map(|(claim, label, span_text)| {
            let client = &client;
            async move { nli_entail(claim, *label, span_text, client, config).await }
        });
        futures::future::join_all(futures).await
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(CliError::from)?;

    write_jsonl(&args.out, &judgments)?;
    let mut manifest = PipelineManifest::start(
        "nli-eval",
        config,
        None,
        None,
        &[sha256_file(&args.claims)?, sha256_file(&args.dataset)?],
    );
    manifest.record_output("judgments", &args.out);
    manifest.finalize(&args.out)?;
    Ok(())
}

#[derive(Serialize)]
struct KappaOutput {
    annotator_a: String,
    annotator_b: String,
    claim_count: usize,
    kappa: Score,
}

fn cmd_kappa(args: KappaArgs) -> Result<(), CliError> {
    let records: Vec<AnnotationRecord> = read_jsonl(&args.annotations)?;
    let mut annotators: Vec<String> = records
        .iter()
        .map(|r| r.annotator_id.clone())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    annotators.sort();
    let (a, b) = match (&args.annotator_a, &args.annotator_b) {
        (Some(a), Some(b)) => (a.clone(), b.clone()),
        _ if annotators.len() == 2 => (annotators[0].clone(), annotators[1].clone()),
        _ => {
            return Err(CliError::Validation(format!(
                "found {} annotators; pass --annotator-a and --annotator-b",
                annotators.len()
            )))
        }
    };
    let records_a: Vec<AnnotationRecord> = records
        .iter()
        .filter(|r| r.annotator_id == a)
        .cloned()
        .collect();
    let records_b: Vec<AnnotationRecord> = records
        .iter()
        .filter(|r| r.annotator_id == b)
        .cloned()
        .collect();
    let kappa = cohens_kappa::<Score>(&records_a, &records_b)?;
    let output = KappaOutput {
        annotator_a: a,
        annotator_b: b,
        claim_count: records_a.len(),
        kappa,
    };
    println!(
        "kappa({}, {}) over {} claims = {:.4}",
        output.annotator_a, output.annotator_b, output.claim_count, output.kappa
    );
    if let Some(out) = &args.out {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&output).expect("kappa output serializes"),
        )?;
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let claims = load_claims(&args.claims)?;
    let verdicts: Vec<Verdict> = read_jsonl(&args.verdicts)?;
    let docs = load_dataset(&args.dataset)?;
    let judgments: Option<Vec<NliJudgment>> = match &args.judgments {
        Some(path) => Some(read_jsonl(path)?),
        None => None,
    };
    let annotations: Option<Vec<AnnotationRecord>> = match &args.annotations {
        Some(path) => Some(read_jsonl(path)?),
        None => None,
    };
    let diagnostics = match &args.diagnostics {
        Some(path) => Some(load_diagnostics(path)?),
        None => None,
    };
    let inputs = build_report(
        &claims,
        &verdicts,
        &docs,
        judgments.as_deref(),
        annotations.as_deref(),
        diagnostics.as_deref(),
        args.reconciliation.into(),
    )?;

    let mut out = render_markdown(&inputs.report, "Pipeline report");
    out.push_str("## Provenance\n\n");
    let mut inputs_list: Vec<(&str, &Path)> = vec![
        ("claims", args.claims.as_path()),
        ("verdicts", args.verdicts.as_path()),
        ("dataset", args.dataset.as_path()),
    ];
    if let Some(path) = &args.judgments {
        inputs_list.push(("judgments", path.as_path()));
    }
    if let Some(path) = &args.annotations {
        inputs_list.push(("annotations", path.as_path()));
    }
    for (name, path) in inputs_list {
        let manifest_path = manifest_path_for(path);
        match PipelineManifest::load(&manifest_path) {
            Ok(manifest) => {
                out.push_str(&format!(
                    "- {name}: stage `{}`, run `{}`, model `{}`",
                    manifest.stage, manifest.run_id, manifest.config.model_name
                ));
                if let Some(digest) = &manifest.template_digest {
                    out.push_str(&format!(", template `{}`", &digest[..12.min(digest.len())]));
                }
                if let Some(digest) = &manifest.corpus_digest {
                    out.push_str(&format!(", corpus `{}`", &digest[..12.min(digest.len())]));
                }
                out.push('\n');
            }
            Err(_) => out.push_str(&format!("- {name}: no manifest found\n")),
        }
    }
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, out)?;
    Ok(())
}
