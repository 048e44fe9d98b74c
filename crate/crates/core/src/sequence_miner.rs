//! Splits sessions into converted query chains and aggregates them into
//! per-transitional-query journey contexts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_log::{normalize_query, EventKind, RawEvent, Session};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MinerError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// An ordered run of normalized queries inside one session segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryChain {
    pub queries: Vec<String>,
    #[serde(rename = "converted")]
    pub terminal_converted: bool,
    #[serde(rename = "items", default)]
    pub terminal_items: BTreeSet<String>,
}

impl QueryChain {
    pub fn new<S: Into<String>>(queries: impl IntoIterator<Item = S>) -> Self {
        QueryChain {
            queries: queries.into_iter().map(Into::into).collect(),
            terminal_converted: true,
            terminal_items: BTreeSet::new(),
        }
    }

    pub fn converging(&self) -> Option<&str> {
        self.queries.last().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Cuts the event list right after every bbowac event. A trailing segment without
/// a bbowac is still returned.
pub fn segment_session(session: &Session) -> Vec<&[RawEvent]> {
    let mut segments = Vec::new();
    let mut start = 0;
    for (i, ev) in session.events.iter().enumerate() {
        if ev.is_bbowac() {
            segments.push(&session.events[start..=i]);
            start = i + 1;
        }
    }
    if start < session.events.len() {
        segments.push(&session.events[start..]);
    }
    segments
}

/// Builds the chain for a segment that ends in a bbowac event and holds at least two
/// queries after consecutive-duplicate collapse.
pub fn extract_chain(segment: &[RawEvent]) -> Option<QueryChain> {
    if !segment.last().is_some_and(RawEvent::is_bbowac) {
        return None;
    }

    let mut queries: Vec<String> = Vec::new();
    let mut last_query_at = None;
    for (i, ev) in segment.iter().enumerate() {
        if let EventKind::QueryIssued { query_text } = &ev.kind {
            let Ok(q) = normalize_query(query_text) else { continue };
            last_query_at = Some(i);
            if queries.last() != Some(&q) {
                queries.push(q);
            }
        }
    }
    if queries.len() < 2 {
        return None;
    }

    let after = last_query_at.map_or(0, |i| i + 1);
    let terminal_items = segment[after..]
        .iter()
        .filter_map(|e| e.item_id().map(str::to_string))
        .collect();

    Some(QueryChain {
        queries,
        terminal_converted: true,
        terminal_items,
    })
}

/// All converted chains of a session, in segment order.
pub fn mine_session(session: &Session) -> Vec<QueryChain> {
    segment_session(session).into_iter().filter_map(extract_chain).collect()
}

/// Source, transitional and converging queries aggregated over chains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JourneyContext {
    #[serde(rename = "t")]
    pub transitional_query: String,
    #[serde(rename = "sources")]
    pub source_queries: BTreeMap<String, u64>,
    #[serde(rename = "convergings")]
    pub converging_queries: BTreeMap<String, u64>,
    pub support: u64,
}

impl JourneyContext {
    pub fn new(transitional_query: impl Into<String>) -> Self {
        JourneyContext {
            transitional_query: transitional_query.into(),
            source_queries: BTreeMap::new(),
            converging_queries: BTreeMap::new(),
            support: 0,
        }
    }

    /// Source queries by descending count, ties lexicographic.
    pub fn ranked_sources(&self) -> Vec<(&str, u64)> {
        rank_counts(&self.source_queries)
    }

    /// Converging queries by descending count, ties lexicographic.
    pub fn ranked_convergings(&self) -> Vec<(&str, u64)> {
        rank_counts(&self.converging_queries)
    }

    /// Folds another context for the same transitional query into this one.
    pub fn merge(&mut self, other: &JourneyContext) {
        debug_assert_eq!(self.transitional_query, other.transitional_query);
        for (q, n) in &other.source_queries {
            *self.source_queries.entry(q.clone()).or_default() += n;
        }
        for (q, n) in &other.converging_queries {
            *self.converging_queries.entry(q.clone()).or_default() += n;
        }
        self.support += other.support;
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("journey serialization is infallible")
    }
}

fn rank_counts(map: &BTreeMap<String, u64>) -> Vec<(&str, u64)> {
    let mut v: Vec<(&str, u64)> = map.iter().map(|(q, &n)| (q.as_str(), n)).collect();
    // BTreeMap iteration is already lexicographic, stable sort keeps that for ties
    v.sort_by_key(|&(_, n)| std::cmp::Reverse(n));
    v
}

pub type Journeys = BTreeMap<String, JourneyContext>;

/// Adds one chain's contribution to `journeys`.
///
/// Every interior query is a transitional query for the chain's first and last
/// query. A two-query chain is keyed by its source.
pub fn accumulate_chain(journeys: &mut Journeys, chain: &QueryChain) {
    let n = chain.queries.len();
    if n < 2 {
        return;
    }
    let source = &chain.queries[0];
    let converging = &chain.queries[n - 1];
    let transitionals: BTreeSet<&String> = if n == 2 {
        std::iter::once(source).collect()
    } else {
        chain.queries[1..n - 1].iter().collect()
    };

    for t in transitionals {
        if t == converging {
            continue;
        }
        let ctx = journeys
            .entry(t.clone())
            .or_insert_with(|| JourneyContext::new(t.clone()));
        *ctx.source_queries.entry(source.clone()).or_default() += 1;
        *ctx.converging_queries.entry(converging.clone()).or_default() += 1;
        ctx.support += 1;
    }
}

pub fn aggregate_journeys<'a, I>(chains: I) -> Journeys
where
    I: IntoIterator<Item = &'a QueryChain>,
{
    let mut journeys = Journeys::new();
    for chain in chains {
        accumulate_chain(&mut journeys, chain);
    }
    journeys
}

/// Combines two shard aggregates.
pub fn merge_journeys(mut left: Journeys, right: Journeys) -> Journeys {
    for (t, ctx) in right {
        match left.get_mut(&t) {
            Some(existing) => existing.merge(&ctx),
            None => {
                left.insert(t, ctx);
            }
        }
    }
    left
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub min_support: u64,
    pub max_sources: usize,
    pub max_convergings: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            min_support: 1,
            max_sources: 10,
            max_convergings: 10,
        }
    }
}

/// Drops low-support contexts and keeps the top-k sources and convergings by count.
pub fn prune_journeys(journeys: Journeys, cfg: &PruneConfig) -> Result<Journeys, MinerError> {
    if cfg.min_support < 1 {
        return Err(MinerError::InvalidConfig("min_support must be >= 1".into()));
    }
    let top_k = |map: &BTreeMap<String, u64>, k: usize| -> BTreeMap<String, u64> {
        rank_counts(map)
            .into_iter()
            .take(k)
            .map(|(q, n)| (q.to_string(), n))
            .collect()
    };
    Ok(journeys
        .into_iter()
        .filter(|(_, ctx)| ctx.support >= cfg.min_support)
        .map(|(t, ctx)| {
            let pruned = JourneyContext {
                source_queries: top_k(&ctx.source_queries, cfg.max_sources),
                converging_queries: top_k(&ctx.converging_queries, cfg.max_convergings),
                ..ctx
            };
            (t, pruned)
        })
        .collect())
}
