//! Aggregate measurements: factuality scores with 0-claim exclusion, claim
//! statistics, NLI-based verifiable rates with 0-claim penalization,
//! inter-annotator agreement, and taxonomy breakdowns.
//!
//! Everything here is a pure function over in-memory inputs; the scalar type
//! is generic so the same arithmetic runs at `f32` or `f64`.

use crate::client::{ChatRequest, LlmClient};
use crate::decomposer::DecompositionResult;
use crate::num::{mean, sample_std, Real};
use crate::types::{count_tokens, Claim, Document, RunConfig, SpanLabel, TaxonomyLabel};
use crate::verifier::VerifyError;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no scorable records in dataset")]
    EmptyDataset,
    #[error("annotators labeled different claim sets")]
    MismatchedClaimSets,
    #[error("annotator {annotator_id} labeled claim {claim_id} more than once")]
    DuplicateAnnotation {
        annotator_id: String,
        claim_id: String,
    },
}

/// Per-response factuality: the fraction of claims judged True. `score` is
/// undefined (`None`) when the response produced no claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseScore<R> {
    pub document_id: String,
    pub claim_count: usize,
    pub true_count: usize,
    pub score: Option<R>,
}

/// Decomposition behavior statistics over a dataset. Standard deviations are
/// sample (n - 1) deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimStats<R> {
    pub zero_claim_rate: R,
    pub claims_per_response_mean: R,
    pub claims_per_response_std: R,
    pub claims_per_sentence_mean: R,
    pub claims_per_sentence_std: R,
    pub tokens_per_claim_mean: R,
}

/// One claim-vs-span entailment judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliJudgment {
    pub claim_id: String,
    pub span_label: String,
    pub entail_label: bool,
    pub entail_score: f64,
    pub parse_ok: bool,
}

/// One annotator's taxonomy label for one claim. Each annotator labels a
/// claim at most once; multi-label views arise when annotators are
/// reconciled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub claim_id: String,
    pub annotator_id: String,
    pub label: TaxonomyLabel,
}

/// Verifiability rates over span-annotated documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiableRates<R> {
    pub verifiable_rate: R,
    pub adjusted_rate: R,
    pub penalization: R,
}

/// How to combine several annotators' labels for one claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reconciliation {
    /// Union: a label counts if any annotator assigned it.
    Annotator,
    /// Intersection: a label counts only if every annotator of that claim
    /// assigned it.
    Intersection,
}

/// Per-label claim counts and percentages. A claim can carry several error
/// labels after reconciliation, so percentages may sum above 100%. `Valid`
/// counts only claims whose reconciled label set is exactly `{Valid}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyBreakdown {
    pub total_claims: usize,
    pub counts: BTreeMap<String, usize>,
    pub percentages: BTreeMap<String, f64>,
}

/// Factuality of one response: mean of per-claim {0, 1} scores.
pub fn response_factuality<R: Real>(
    document_id: &str,
    verdict_values: &[bool],
) -> ResponseScore<R> {
    let claim_count = verdict_values.len();
    let true_count = verdict_values.iter().filter(|&&v| v).count();
    let score = if claim_count == 0 {
        None
    } else {
        Some(R::from_count(true_count) / R::from_count(claim_count))
    };
    ResponseScore {
        document_id: document_id.to_string(),
        claim_count,
        true_count,
        score,
    }
}

/// Dataset factuality: unweighted mean of per-response scores after
/// excluding 0-claim responses (macro average).
pub fn dataset_factuality<R: Real>(scores: &[ResponseScore<R>]) -> Result<R, MetricsError> {
    let kept: Vec<R> = scores.iter().filter_map(|s| s.score).collect();
    if kept.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    Ok(mean(&kept))
}

/// Claim-pooled (micro) dataset factuality: total True claims over total
/// claims, again excluding 0-claim responses.
pub fn dataset_factuality_micro<R: Real>(scores: &[ResponseScore<R>]) -> Result<R, MetricsError> {
    let total: usize = scores.iter().map(|s| s.claim_count).sum();
    if total == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    let trues: usize = scores.iter().map(|s| s.true_count).sum();
    Ok(R::from_count(trues) / R::from_count(total))
}

/// Claim statistics over decomposition results.
///
/// Units flagged `failed` are excluded; a document whose every unit failed is
/// excluded entirely. The per-sentence figures pool sentences across all
/// documents; per-response figures aggregate per-document claim totals.
pub fn claim_stats<R: Real>(results: &[DecompositionResult]) -> Result<ClaimStats<R>, MetricsError> {
    let mut doc_order: Vec<&str> = Vec::new();
    let mut per_doc: HashMap<&str, Vec<&DecompositionResult>> = HashMap::new();
    for result in results {
        if result.failed {
            continue;
        }
        per_doc
            .entry(result.document_id.as_str())
            .or_insert_with(|| {
                doc_order.push(result.document_id.as_str());
                Vec::new()
            })
            .push(result);
    }
    if doc_order.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }

    let mut response_totals: Vec<R> = Vec::with_capacity(doc_order.len());
    let mut sentence_counts: Vec<R> = Vec::new();
    let mut zero_claim_docs = 0usize;
    let mut token_counts: Vec<R> = Vec::new();
    for doc_id in &doc_order {
        let units = &per_doc[doc_id];
        let total: usize = units.iter().map(|u| u.claims.len()).sum();
        if total == 0 {
            zero_claim_docs += 1;
        }
        response_totals.push(R::from_count(total));
        for unit in units {
            sentence_counts.push(R::from_count(unit.claims.len()));
            for claim in &unit.claims {
                token_counts.push(R::from_count(count_tokens(&claim.text)));
            }
        }
    }

    Ok(ClaimStats {
        zero_claim_rate: R::from_count(zero_claim_docs) / R::from_count(doc_order.len()),
        claims_per_response_mean: mean(&response_totals),
        claims_per_response_std: sample_std(&response_totals),
        claims_per_sentence_mean: mean(&sentence_counts),
        claims_per_sentence_std: sample_std(&sentence_counts),
        tokens_per_claim_mean: mean(&token_counts),
    })
}

/// System prompt for the entailment judge.
pub const NLI_SYSTEM_PROMPT: &str = "You are an entailment model. You will be given a claim and a premise. You should determine if the premise entails the claim. If the premise entails the claim, return True. If the premise doesn't entail the claim, such as contradiction or neutral, return False. If you are not sure, return False. You should also return the entailment score, which is a float between 0 and 1. The higher the score, the more likely the premise entails the claim. The threshold for the label to be True is the score greater than 0.8. Output in the format of\nLabel: True/False\nScore: 0.6.";

/// User prompt for the entailment judge; the premise span and the claim are
/// each enclosed in braces.
pub fn nli_user_prompt(premise: &str, claim: &str) -> String {
    format!("Does the premise entail this claim?\n\nPremise: {{{premise}}}\n\nClaim: {{{claim}}}")
}

/// Parse `Label: True/False` and `Score: <float>` lines (case-insensitive,
/// tolerant of extra whitespace). Scores are clamped into [0, 1].
pub fn parse_nli_output(raw_output: &str) -> Option<(bool, f64)> {
    static LABEL: OnceLock<Regex> = OnceLock::new();
    static SCORE: OnceLock<Regex> = OnceLock::new();
    let label_re = LABEL.get_or_init(|| {
        Regex::new(r"(?i)^\s*label\s*:\s*(true|false)").expect("label regex")
    });
    let score_re = SCORE.get_or_init(|| {
        Regex::new(r"(?i)^\s*score\s*:\s*([0-9]*\.?[0-9]+)").expect("score regex")
    });
    let mut label = None;
    let mut score = None;
    for line in raw_output.lines() {
        if label.is_none() {
            if let Some(captures) = label_re.captures(line) {
                label = Some(captures[1].eq_ignore_ascii_case("true"));
            }
        }
        if score.is_none() {
            if let Some(captures) = score_re.captures(line) {
                score = captures[1].parse::<f64>().ok().map(|s| s.clamp(0.0, 1.0));
            }
        }
    }
    match (label, score) {
        (Some(label), Some(score)) => Some((label, score)),
        _ => None,
    }
}

/// Judge whether a span entails a claim. The final label requires both the
/// model's True and a score strictly above the configured threshold.
pub async fn nli_entail(
    claim: &Claim,
    span_label: SpanLabel,
    span_text: &str,
    client: &LlmClient,
    config: &RunConfig,
) -> Result<NliJudgment, VerifyError> {
    let request = ChatRequest {
        model_name: config.model_name.clone(),
        system_prompt: Some(NLI_SYSTEM_PROMPT.to_string()),
        user_prompt: nli_user_prompt(span_text, &claim.text),
        temperature: config.temperature,
        top_p: config.top_p,
        max_tokens: config.max_tokens,
    };
    let response = client.cached_complete(&request).await?;
    let judgment = match parse_nli_output(&response.text) {
        Some((label, score)) => NliJudgment {
            claim_id: claim.id.clone(),
            span_label: format!("{span_label:?}"),
            entail_label: label && score > config.nli_threshold,
            entail_score: score,
            parse_ok: true,
        },
        None => NliJudgment {
            claim_id: claim.id.clone(),
            span_label: format!("{span_label:?}"),
            entail_label: false,
            entail_score: 0.0,
            parse_ok: false,
        },
    };
    Ok(judgment)
}

/// Verifiable-rate family over span-annotated documents.
///
/// A document is verifiable when it has at least one Cause, Suggestion, or
/// Information span. For a verifiable document with claims, r = fraction of
/// its claims entailed by some verifiable span. The plain rate averages r
/// over verifiable documents with claims (zero when there are none); the
/// adjusted rate averages over all verifiable documents with 0-claim
/// documents scored -1; penalization is their difference.
pub fn verifiable_rates<R: Real>(
    documents: &[Document],
    claims: &[Claim],
    judgments: &[NliJudgment],
) -> Result<VerifiableRates<R>, MetricsError> {
    let verifiable_labels = ["Cause", "Suggestion", "Information"];
    let mut entailed: HashSet<&str> = HashSet::new();
    for judgment in judgments {
        if judgment.entail_label && verifiable_labels.contains(&judgment.span_label.as_str()) {
            entailed.insert(judgment.claim_id.as_str());
        }
    }
    let mut claims_by_doc: HashMap<&str, Vec<&Claim>> = HashMap::new();
    for claim in claims {
        claims_by_doc
            .entry(claim.document_id.as_str())
            .or_default()
            .push(claim);
    }

    let mut claimed_rates: Vec<R> = Vec::new();
    let mut adjusted_scores: Vec<R> = Vec::new();
    for doc in documents {
        let verifiable = doc
            .span_annotations
            .as_deref()
            .unwrap_or_default()
            .iter()
            .any(|span| span.label.is_verifiable());
        if !verifiable {
            continue;
        }
        match claims_by_doc.get(doc.id.as_str()) {
            Some(doc_claims) if !doc_claims.is_empty() => {
                let entailed_count = doc_claims
                    .iter()
                    .filter(|c| entailed.contains(c.id.as_str()))
                    .count();
                let rate = R::from_count(entailed_count) / R::from_count(doc_claims.len());
                claimed_rates.push(rate);
                adjusted_scores.push(rate);
            }
            _ => adjusted_scores.push(-R::one()),
        }
    }
    if adjusted_scores.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let verifiable_rate = mean(&claimed_rates);
    let adjusted_rate = mean(&adjusted_scores);
    Ok(VerifiableRates {
        verifiable_rate,
        adjusted_rate,
        penalization: verifiable_rate - adjusted_rate,
    })
}

/// Cohen's kappa between two annotators who labeled the same claim set.
pub fn cohens_kappa<R: Real>(
    records_a: &[AnnotationRecord],
    records_b: &[AnnotationRecord],
) -> Result<R, MetricsError> {
    let map_a = label_map(records_a)?;
    let map_b = label_map(records_b)?;
    if map_a.len() != map_b.len() || !map_a.keys().all(|k| map_b.contains_key(k)) {
        return Err(MetricsError::MismatchedClaimSets);
    }
    if map_a.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let n = R::from_count(map_a.len());
    let mut agree = 0usize;
    let mut marginal_a: BTreeMap<TaxonomyLabel, usize> = BTreeMap::new();
    let mut marginal_b: BTreeMap<TaxonomyLabel, usize> = BTreeMap::new();
    for (claim_id, &label_a) in &map_a {
        let label_b = map_b[claim_id];
        if label_a == label_b {
            agree += 1;
        }
        *marginal_a.entry(label_a).or_insert(0) += 1;
        *marginal_b.entry(label_b).or_insert(0) += 1;
    }
    let observed = R::from_count(agree) / n;
    let mut expected = R::zero();
    for (label, &count_a) in &marginal_a {
        if let Some(&count_b) = marginal_b.get(label) {
            expected = expected + (R::from_count(count_a) / n) * (R::from_count(count_b) / n);
        }
    }
    if expected >= R::one() {
        // Both annotators used a single identical label: agreement is
        // perfect by construction.
        return Ok(R::one());
    }
    Ok((observed - expected) / (R::one() - expected))
}

fn label_map(
    records: &[AnnotationRecord],
) -> Result<BTreeMap<&str, TaxonomyLabel>, MetricsError> {
    let mut map = BTreeMap::new();
    for record in records {
        if map.insert(record.claim_id.as_str(), record.label).is_some() {
            return Err(MetricsError::DuplicateAnnotation {
                annotator_id: record.annotator_id.clone(),
                claim_id: record.claim_id.clone(),
            });
        }
    }
    Ok(map)
}

/// Count claims per taxonomy label after reconciling annotators.
pub fn taxonomy_breakdown(
    records: &[AnnotationRecord],
    reconciliation: Reconciliation,
) -> TaxonomyBreakdown {
    let mut per_claim: BTreeMap<&str, Vec<(&str, TaxonomyLabel)>> = BTreeMap::new();
    for record in records {
        per_claim
            .entry(record.claim_id.as_str())
            .or_default()
            .push((record.annotator_id.as_str(), record.label));
    }
    let total_claims = per_claim.len();
    let mut counts: BTreeMap<TaxonomyLabel, usize> = BTreeMap::new();
    for labels in per_claim.values() {
        let annotators: BTreeSet<&str> = labels.iter().map(|(a, _)| *a).collect();
        let mut reconciled: BTreeSet<TaxonomyLabel> = BTreeSet::new();
        match reconciliation {
            Reconciliation::Annotator => {
                reconciled.extend(labels.iter().map(|(_, l)| *l));
            }
            Reconciliation::Intersection => {
                for candidate in TaxonomyLabel::ALL {
                    let all_assigned = annotators.iter().all(|annotator| {
                        labels
                            .iter()
                            .any(|(a, l)| a == annotator && *l == candidate)
                    });
                    if all_assigned {
                        reconciled.insert(candidate);
                    }
                }
            }
        }
        if reconciled.len() == 1 && reconciled.contains(&TaxonomyLabel::Valid) {
            *counts.entry(TaxonomyLabel::Valid).or_insert(0) += 1;
        } else {
            for label in reconciled {
                if label != TaxonomyLabel::Valid {
                    *counts.entry(label).or_insert(0) += 1;
                }
            }
        }
    }
    let mut named_counts = BTreeMap::new();
    let mut percentages = BTreeMap::new();
    for label in TaxonomyLabel::ALL {
        let count = counts.get(&label).copied().unwrap_or(0);
        named_counts.insert(label.name().to_string(), count);
        let percent = if total_claims == 0 {
            0.0
        } else {
            100.0 * count as f64 / total_claims as f64
        };
        percentages.insert(label.name().to_string(), percent);
    }
    TaxonomyBreakdown {
        total_claims,
        counts: named_counts,
        percentages,
    }
}
