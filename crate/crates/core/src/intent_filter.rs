//! Intent boundary detection.
//!
//! Walks a converted chain backward from its converging query and keeps the
//! longest suffix in which every adjacent pair of queries is at least
//! `threshold` similar. Everything before the first sub-threshold pair is cut.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query_repr::QuerySimilarity;
use crate::sequence_miner::QueryChain;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntentError {
    #[error("chain did not end in a conversion")]
    NotConverted,

    #[error("invalid intent filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentFilterConfig {
    pub threshold: f64,
}

impl Default for IntentFilterConfig {
    fn default() -> Self {
        IntentFilterConfig { threshold: 0.7 }
    }
}

impl IntentFilterConfig {
    pub fn validate(&self) -> Result<(), IntentError> {
        if (0.0..=1.0).contains(&self.threshold) {
            Ok(())
        } else {
            Err(IntentError::InvalidConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )))
        }
    }
}

/// Index of the first query inside the intent boundary.
fn boundary_start<S: QuerySimilarity + ?Sized>(queries: &[String], sim: &S, threshold: f64) -> usize {
    let mut start = queries.len().saturating_sub(1);
    while start > 0 && sim.similarity(&queries[start - 1], &queries[start]) >= threshold {
        start -= 1;
    }
    start
}

/// Keeps the intent-consistent suffix of `chain`. The converging query always stays,
/// so the result may have a single query.
pub fn filter_chain<S: QuerySimilarity + ?Sized>(
    chain: &QueryChain,
    sim: &S,
    cfg: &IntentFilterConfig,
) -> Result<QueryChain, IntentError> {
    if !chain.terminal_converted {
        return Err(IntentError::NotConverted);
    }
    let start = boundary_start(&chain.queries, sim, cfg.threshold);
    Ok(QueryChain {
        queries: chain.queries[start..].to_vec(),
        terminal_converted: true,
        terminal_items: chain.terminal_items.clone(),
    })
}

/// Filters every chain and drops the ones left with fewer than two queries.
/// Unconverted chains are dropped too.
pub fn filter_corpus<S: QuerySimilarity + ?Sized>(
    chains: &[QueryChain],
    sim: &S,
    cfg: &IntentFilterConfig,
) -> Vec<QueryChain> {
    chains
        .iter()
        .filter_map(|c| filter_chain(c, sim, cfg).ok())
        .filter(|c| c.len() >= 2)
        .collect()
}
