//! Query representations from item interactions, and the query similarity used by
//! the intent filter and the alternate reranker.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_log::{normalize_query, EventKind, Session};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReprError {
    #[error("profile has no items")]
    EmptyProfile,

    #[error("invalid similarity config: {0}")]
    InvalidConfig(String),
}

/// Items a query led to, with interaction counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryItemProfile {
    #[serde(rename = "q")]
    pub query: String,
    pub items: BTreeMap<String, u64>,
}

impl QueryItemProfile {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("profile serialization is infallible")
    }
}

pub type Profiles = BTreeMap<String, QueryItemProfile>;

/// Attributes every click and bbowac event to the latest query in its session.
pub fn build_profiles<'a, I>(sessions: I) -> Profiles
where
    I: IntoIterator<Item = &'a Session>,
{
    let mut profiles = Profiles::new();
    for session in sessions {
        let mut active: Option<String> = None;
        for ev in &session.events {
            match &ev.kind {
                EventKind::QueryIssued { query_text } => {
                    if let Ok(q) = normalize_query(query_text) {
                        active = Some(q);
                    }
                }
                EventKind::ItemClick { item_id } | EventKind::Bbowac { item_id, .. } => {
                    let Some(q) = &active else { continue };
                    let profile = profiles.entry(q.clone()).or_insert_with(|| QueryItemProfile {
                        query: q.clone(),
                        items: BTreeMap::new(),
                    });
                    *profile.items.entry(item_id.clone()).or_default() += 1;
                }
            }
        }
    }
    profiles
}

/// Combines two shard results.
pub fn merge_profiles(mut left: Profiles, right: Profiles) -> Profiles {
    for (q, p) in right {
        let slot = left.entry(q).or_insert_with(|| QueryItemProfile {
            query: p.query.clone(),
            items: BTreeMap::new(),
        });
        for (item, n) in p.items {
            *slot.items.entry(item).or_default() += n;
        }
    }
    left
}

/// Jaccard overlap of the two item sets.
pub fn sim_items(a: &QueryItemProfile, b: &QueryItemProfile) -> Result<f64, ReprError> {
    if a.items.is_empty() || b.items.is_empty() {
        return Err(ReprError::EmptyProfile);
    }
    let shared = a.items.keys().filter(|k| b.items.contains_key(*k)).count();
    let union = a.items.len() + b.items.len() - shared;
    Ok(shared as f64 / union as f64)
}

/// Jaccard overlap of whitespace tokens.
pub fn sim_tokens(a: &str, b: &str) -> f64 {
    let ta: HashSet<&str> = a.split_whitespace().collect();
    let tb: HashSet<&str> = b.split_whitespace().collect();
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let shared = ta.intersection(&tb).count();
            shared as f64 / (ta.len() + tb.len() - shared) as f64
        }
    }
}

/// Anything that scores a pair of normalized queries in `[0, 1]`.
pub trait QuerySimilarity: Sync {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

impl<F> QuerySimilarity for F
where
    F: Fn(&str, &str) -> f64 + Sync,
{
    fn similarity(&self, a: &str, b: &str) -> f64 {
        self(a, b)
    }
}

/// Token Jaccard as a [`QuerySimilarity`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenSimilarity;

impl QuerySimilarity for TokenSimilarity {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        sim_tokens(a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub min_profile_items: usize,
    /// Weight of item similarity in the blend.
    pub blend_alpha: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            min_profile_items: 3,
            blend_alpha: 0.7,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<(), ReprError> {
        if !(0.0..=1.0).contains(&self.blend_alpha) {
            return Err(ReprError::InvalidConfig(format!(
                "blend_alpha {} outside [0, 1]",
                self.blend_alpha
            )));
        }
        if self.min_profile_items < 1 {
            return Err(ReprError::InvalidConfig("min_profile_items must be >= 1".into()));
        }
        Ok(())
    }
}

/// Blends item-set and token similarity.
pub fn similarity(a: &str, b: &str, profiles: &Profiles, cfg: &SimilarityConfig) -> f64 {
    let rich = |q: &str| profiles.get(q).filter(|p| p.items.len() >= cfg.min_profile_items);
    let tokens = sim_tokens(a, b);
    match (rich(a), rich(b)) {
        (Some(pa), Some(pb)) => {
            let items = sim_items(pa, pb).expect("rich profiles are non-empty");
            cfg.blend_alpha * items + (1.0 - cfg.blend_alpha) * tokens
        }
        _ => tokens,
    }
}

/// Profile-backed similarity, shared read-only once built.
#[derive(Debug, Clone, Default)]
pub struct ProfileSimilarity {
    pub profiles: Profiles,
    pub config: SimilarityConfig,
}

impl ProfileSimilarity {
    pub fn new(profiles: Profiles, config: SimilarityConfig) -> Self {
        ProfileSimilarity { profiles, config }
    }
}

impl QuerySimilarity for ProfileSimilarity {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        similarity(a, b, &self.profiles, &self.config)
    }
}
