//! The run report: one JSON object with every metric family, plus a markdown
//! rendering shaped like the usual results tables.
//!
//! Reports are pure functions of their inputs: no timestamps, no hostnames,
//! so regenerating from the same files yields identical bytes.

use crate::metrics::{ClaimStats, TaxonomyBreakdown, VerifiableRates};
use crate::num::Real;
use serde::{Deserialize, Serialize};

/// Aggregate metrics for one run. `dataset_factuality` is the macro
/// (per-response) average after 0-claim exclusion; the micro (per-claim)
/// average is carried as a labeled secondary figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport<R> {
    pub dataset_factuality: R,
    pub dataset_factuality_micro: R,
    pub claim_stats: ClaimStats<R>,
    pub verifiable_rates: Option<VerifiableRates<R>>,
    pub taxonomy: Option<TaxonomyBreakdown>,
    pub unparseable_verdict_rate: R,
}

fn pct<R: Real>(x: R) -> String {
    format!("{:.2}%", x.to_f64().unwrap_or(f64::NAN) * 100.0)
}

fn num<R: Real>(x: R) -> String {
    format!("{:.2}", x.to_f64().unwrap_or(f64::NAN))
}

/// Claim-statistics table on its own, shared by the stats command and the
/// full report.
pub fn render_claim_stats<R: Real>(stats: &ClaimStats<R>) -> String {
    let mut out = String::new();
    out.push_str("## Claim statistics\n\n");
    out.push_str("| Metric | Value |\n|---|---|\n");
    out.push_str(&format!("| 0-claim rate | {} |\n", pct(stats.zero_claim_rate)));
    out.push_str(&format!(
        "| Claims per response | {} ({}) |\n",
        num(stats.claims_per_response_mean),
        num(stats.claims_per_response_std)
    ));
    out.push_str(&format!(
        "| Claims per sentence | {} ({}) |\n",
        num(stats.claims_per_sentence_mean),
        num(stats.claims_per_sentence_std)
    ));
    out.push_str(&format!(
        "| Tokens per claim | {} |\n\n",
        num(stats.tokens_per_claim_mean)
    ));
    out
}

/// Render the report as markdown tables with two-decimal percentages.
pub fn render_markdown<R: Real>(report: &DatasetReport<R>, title: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {title}\n\n"));

    out.push_str("## Factuality\n\n");
    out.push_str("| Metric | Value |\n|---|---|\n");
    out.push_str(&format!(
        "| Factuality (macro, 0-claim responses excluded) | {} |\n",
        pct(report.dataset_factuality)
    ));
    out.push_str(&format!(
        "| Factuality (micro, claim-pooled) | {} |\n",
        pct(report.dataset_factuality_micro)
    ));
    out.push_str(&format!(
        "| Unparseable verdict rate | {} |\n\n",
        pct(report.unparseable_verdict_rate)
    ));

    out.push_str(&render_claim_stats(&report.claim_stats));

    if let Some(rates) = &report.verifiable_rates {
        out.push_str("## Claim verifiability\n\n");
        out.push_str("| Verifiable Rate | Adjusted Verifiable Rate | Penalization |\n|---|---|---|\n");
        out.push_str(&format!(
            "| {} | {} | {} |\n\n",
            pct(rates.verifiable_rate),
            pct(rates.adjusted_rate),
            pct(rates.penalization)
        ));
    }

    if let Some(taxonomy) = &report.taxonomy {
        out.push_str("## Taxonomy breakdown\n\n");
        out.push_str(&format!("Total claims: {}\n\n", taxonomy.total_claims));
        out.push_str("| Label | Count | Share |\n|---|---|---|\n");
        for (label, count) in &taxonomy.counts {
            let share = taxonomy.percentages.get(label).copied().unwrap_or(0.0);
            out.push_str(&format!("| {label} | {count} | {share:.2}% |\n"));
        }
        out.push('\n');
    }
    out
}
