//! Alternate converging queries from an LLM.
//!
//! A journey context is rendered into an in-context prompt, sent to a completion
//! client, and the answer is parsed, stripped of anything the shoppers already
//! searched, MMR-ordered against the transitional query and gated for pairwise
//! diversity. When the model gives nothing usable the mined converging queries are
//! served instead.

mod client;
mod parse;
mod prompt;
mod rerank;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    EchoClient, HttpClientConfig, HttpLlmClient, LlmClient, LlmError, MockFixture, MockFixtureError, MockLlmClient,
};
pub use parse::{parse_response, parse_responses};
pub use prompt::{build_prompt, prompt_transitional, AlternatorRequest, FewShot, DEFAULT_K};
pub use rerank::{diversity_gate, enforce_constraints, mmr_order, mmr_rerank, DiversityConfig};

use crate::event_log::normalize_query;
use crate::query_repr::QuerySimilarity;
use crate::sequence_miner::JourneyContext;
use crate::suggestion_store::{Alternate, Provenance, SuggestionRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlternatorError {
    #[error("journey {0:?} has no converging queries")]
    EmptyJourney(String),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error("no JSON payload in model output")]
    UnparseableResponse,

    #[error("model output violates schema: {0}")]
    SchemaViolation(String),

    #[error("every alternate repeats a known query")]
    AllFiltered,

    #[error("invalid alternator config: {0}")]
    InvalidConfig(String),
}

/// Parsed model answer for one transitional query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlternatorResponse {
    #[serde(rename = "transitional query")]
    pub transitional_query: String,
    #[serde(rename = "alternate queries")]
    pub alternate_queries: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlternatorConfig {
    pub k: usize,
    /// Require the completion to be exactly one JSON payload.
    pub strict_json: bool,
    pub diversity: DiversityConfig,
}

impl Default for AlternatorConfig {
    fn default() -> Self {
        AlternatorConfig {
            k: DEFAULT_K,
            strict_json: false,
            diversity: DiversityConfig::default(),
        }
    }
}

/// Result of one journey: the record, and why the model output was not used if the
/// record fell back to mined queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternated {
    pub record: SuggestionRecord,
    pub fallback: Option<AlternatorError>,
}

/// Rank score for the `rank`-th alternate: 1, 1/2, 1/3, ...
fn rank_score(rank: usize) -> f64 {
    1.0 / (rank as f64 + 1.0)
}

fn llm_alternates<C, S>(
    journey: &JourneyContext,
    client: &C,
    few_shots: &[FewShot],
    cfg: &AlternatorConfig,
    sim: &S,
) -> Result<Vec<String>, AlternatorError>
where
    C: LlmClient + ?Sized,
    S: QuerySimilarity + ?Sized,
{
    let req = AlternatorRequest {
        journey: journey.clone(),
        k: cfg.k,
    };
    let prompt = build_prompt(&req, few_shots)?;
    let raw = client.complete(&prompt)?;
    let responses = parse_responses(&raw, cfg.strict_json)?;
    let anchor = &journey.transitional_query;
    let wanted = normalize_query(anchor).unwrap_or_else(|_| anchor.clone());
    let resp = responses
        .iter()
        .find(|r| r.transitional_query == wanted)
        .unwrap_or(&responses[0]);
    let candidates = enforce_constraints(resp, journey)?;
    let ranked = mmr_rerank(&candidates, anchor, sim, &cfg.diversity);
    Ok(diversity_gate(&ranked, sim, &cfg.diversity))
}

/// Mined converging queries by count, scored by their share of the journey's
/// conversions.
pub fn mined_record(journey: &JourneyContext, k_out: usize, built_at_ms: u64) -> Option<SuggestionRecord> {
    let ranked: Vec<(&str, u64)> = journey
        .ranked_convergings()
        .into_iter()
        .filter(|(q, _)| *q != journey.transitional_query)
        .take(k_out)
        .collect();
    let total: u64 = journey.converging_queries.values().sum();
    if ranked.is_empty() || total == 0 {
        return None;
    }
    Some(SuggestionRecord {
        anchor_query: journey.transitional_query.clone(),
        alternates: ranked
            .into_iter()
            .map(|(q, n)| Alternate {
                query: q.to_string(),
                score: n as f64 / total as f64,
                provenance: Provenance::Mined,
            })
            .collect(),
        built_at_ms,
        support: journey.support,
    })
}

/// Generates the suggestion record for one journey.
pub fn alternate_journey<C, S>(
    journey: &JourneyContext,
    client: &C,
    few_shots: &[FewShot],
    cfg: &AlternatorConfig,
    sim: &S,
    built_at_ms: u64,
) -> Result<Alternated, AlternatorError>
where
    C: LlmClient + ?Sized,
    S: QuerySimilarity + ?Sized,
{
    cfg.diversity.validate()?;
    match llm_alternates(journey, client, few_shots, cfg, sim) {
        Ok(alternates) => Ok(Alternated {
            record: SuggestionRecord {
                anchor_query: journey.transitional_query.clone(),
                alternates: alternates
                    .into_iter()
                    .enumerate()
                    .map(|(i, q)| Alternate {
                        query: q,
                        score: rank_score(i),
                        provenance: Provenance::Llm,
                    })
                    .collect(),
                built_at_ms,
                support: journey.support,
            },
            fallback: None,
        }),
        Err(err @ AlternatorError::InvalidConfig(_)) => Err(err),
        Err(err) => match mined_record(journey, cfg.diversity.k_out, built_at_ms) {
            Some(record) => Ok(Alternated {
                record,
                fallback: Some(err),
            }),
            None => Err(err),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query_repr::TokenSimilarity;

    const GOLD_OUTPUT: &str = r#"{"transitional query": "18k gold diamonds necklace", "alternate queries": ["18k white gold diamond necklace", "18k yellow gold diamond necklace", "18k gold diamond pendant necklace", "18k gold diamond necklace david yurman", "18k gold diamond necklace tiffany & co", "18k gold diamond necklace cartier", "18k gold diamond necklace van cleef & arpels"]}"#;

    fn gold_journey() -> JourneyContext {
        let mut j = JourneyContext::new("18k gold diamonds necklace");
        j.source_queries.insert("18k gold dacid yarmen".into(), 1);
        j.source_queries.insert("david yurman chain gold 18k".into(), 1);
        j.converging_queries.insert("david yurman chain gold 18k".into(), 2);
        j.converging_queries.insert("18k gold david yurman".into(), 1);
        j.support = 3;
        j
    }

    fn wide() -> AlternatorConfig {
        AlternatorConfig {
            diversity: DiversityConfig {
                k_out: 7,
                max_pairwise_sim: 1.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn gold_llm_record() {
        let client = MockLlmClient::echo(GOLD_OUTPUT);
        let out = alternate_journey(&gold_journey(), &client, &[], &wide(), &TokenSimilarity, 42).unwrap();
        assert!(out.fallback.is_none());
        let r = out.record;
        assert_eq!(r.anchor_query, "18k gold diamonds necklace");
        assert_eq!(r.alternates.len(), 7);
        assert!(r.alternates.iter().all(|a| a.provenance == Provenance::Llm));
        assert!(r
            .alternates
            .iter()
            .any(|a| a.query == "18k gold diamond necklace cartier"));
        assert!(r.validate().is_ok());
        assert_eq!(r.built_at_ms, 42);
        assert_eq!(r.support, 3);
    }

    #[test]
    fn garbage_falls_back_to_mined() {
        let client = MockLlmClient::echo("I cannot help with that.");
        let out = alternate_journey(&gold_journey(), &client, &[], &wide(), &TokenSimilarity, 0).unwrap();
        assert_eq!(out.fallback, Some(AlternatorError::UnparseableResponse));
        let qs: Vec<_> = out.record.alternates.iter().map(|a| a.query.as_str()).collect();
        assert_eq!(qs, ["david yurman chain gold 18k", "18k gold david yurman"]);
        assert!(out.record.alternates.iter().all(|a| a.provenance == Provenance::Mined));
        assert!((out.record.alternates[0].score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn forbidden_only_falls_back() {
        let client = MockLlmClient::echo(
            r#"{"transitional query": "18k gold diamonds necklace", "alternate queries": ["18k gold david yurman"]}"#,
        );
        let out = alternate_journey(&gold_journey(), &client, &[], &wide(), &TokenSimilarity, 0).unwrap();
        assert_eq!(out.fallback, Some(AlternatorError::AllFiltered));
        assert_eq!(out.record.alternates[0].provenance, Provenance::Mined);
    }

    #[test]
    fn transport_failure_without_convergings_propagates() {
        struct Down;
        impl LlmClient for Down {
            fn complete(&self, _: &str) -> Result<String, LlmError> {
                Err(LlmError::TransportError("down".into()))
            }
        }
        let out = alternate_journey(&gold_journey(), &Down, &[], &wide(), &TokenSimilarity, 0).unwrap();
        assert!(matches!(out.fallback, Some(AlternatorError::Llm(_))));

        let empty = JourneyContext::new("nothing");
        let err = alternate_journey(&empty, &Down, &[], &wide(), &TokenSimilarity, 0).unwrap_err();
        assert!(matches!(err, AlternatorError::EmptyJourney(_)));
    }

    #[test]
    fn picks_response_for_matching_transitional() {
        let raw = r#"[{"transitional query": "other", "alternate queries": ["nope"]}, {"transitional query": "18k gold diamonds necklace", "alternate queries": ["18k gold diamond necklace cartier"]}]"#;
        let out = alternate_journey(
            &gold_journey(),
            &MockLlmClient::echo(raw),
            &[],
            &wide(),
            &TokenSimilarity,
            0,
        )
        .unwrap();
        assert_eq!(out.record.alternates[0].query, "18k gold diamond necklace cartier");
    }

    #[test]
    fn deterministic_pipeline() {
        let client = MockLlmClient::echo(GOLD_OUTPUT);
        let cfg = AlternatorConfig::default();
        let a = alternate_journey(&gold_journey(), &client, &[], &cfg, &TokenSimilarity, 1).unwrap();
        let b = alternate_journey(&gold_journey(), &client, &[], &cfg, &TokenSimilarity, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.record.alternates.len() <= cfg.diversity.k_out);
    }
}
