//! In-context prompt for alternate converging queries.

use serde::{Deserialize, Serialize};

use super::{AlternatorError, AlternatorResponse};
use crate::sequence_miner::JourneyContext;

pub const DEFAULT_K: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct AlternatorRequest {
    pub journey: JourneyContext,
    /// Number of alternates asked for.
    pub k: usize,
}

/// A worked journey and the answer we want the model to imitate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShot {
    pub journey: JourneyContext,
    pub response: AlternatorResponse,
}

/// Journey as the model sees it.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct PromptJourney {
    #[serde(rename = "source queries")]
    pub source_queries: Vec<String>,
    #[serde(rename = "transitional query")]
    pub transitional_query: String,
    #[serde(rename = "converging queries")]
    pub converging_queries: Vec<String>,
}

impl From<&JourneyContext> for PromptJourney {
    fn from(j: &JourneyContext) -> Self {
        PromptJourney {
            source_queries: j.ranked_sources().into_iter().map(|(q, _)| q.to_string()).collect(),
            transitional_query: j.transitional_query.clone(),
            converging_queries: j.ranked_convergings().into_iter().map(|(q, _)| q.to_string()).collect(),
        }
    }
}

pub(crate) const INPUT_MARKER: &str = "Input: ";
const OUTPUT_MARKER: &str = "Output: ";

fn instruction(k: usize) -> String {
    format!(
        "You help shoppers on an e-commerce marketplace. Each input is a shopping journey mined \
from search sessions: the source queries where shoppers started, the transitional query they \
passed through, and the converging queries they searched right before a purchase, bid, offer, \
watch, question or add-to-cart.\n\
\n\
For the transitional query, generate {k} alternate converging queries. Each alternate query must:\n\
- keep the shopping intent of the transitional query\n\
- be relevant and likely to lead to a transaction\n\
- be different from every query in \"converging queries\"\n\
- be different from the other alternate queries (vary brand, material, style or product type)\n\
\n\
Answer with one JSON object of the form \
{{\"transitional query\": \"...\", \"alternate queries\": [\"...\"]}} and nothing else.\n"
    )
}

/// Renders the prompt. Identical inputs give identical bytes.
pub fn build_prompt(req: &AlternatorRequest, few_shots: &[FewShot]) -> Result<String, AlternatorError> {
    if req.journey.converging_queries.is_empty() {
        return Err(AlternatorError::EmptyJourney(req.journey.transitional_query.clone()));
    }
    if req.k < 1 {
        return Err(AlternatorError::InvalidConfig("k must be >= 1".into()));
    }

    let mut out = instruction(req.k);
    if !few_shots.is_empty() {
        out.push_str("\nExamples:\n");
        for shot in few_shots {
            out.push('\n');
            out.push_str(INPUT_MARKER);
            out.push_str(&to_json(&PromptJourney::from(&shot.journey)));
            out.push('\n');
            out.push_str(OUTPUT_MARKER);
            out.push_str(&to_json(&shot.response));
            out.push('\n');
        }
    }
    out.push('\n');
    out.push_str(INPUT_MARKER);
    out.push_str(&to_json(&PromptJourney::from(&req.journey)));
    out.push('\n');
    out.push_str(OUTPUT_MARKER.trim_end());
    Ok(out)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("prompt payloads serialize")
}

/// Transitional query of the journey a prompt asks about, if the prompt was built
/// by [`build_prompt`].
pub fn prompt_transitional(prompt: &str) -> Option<String> {
    let (_, tail) = prompt.rsplit_once(INPUT_MARKER)?;
    let line = tail.lines().next()?;
    let journey: PromptJourney = serde_json::from_str(line).ok()?;
    Some(journey.transitional_query)
}
