//! Non-repetition filtering, MMR ordering and the pairwise diversity gate applied
//! to generated alternates.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{AlternatorError, AlternatorResponse};
use crate::event_log::normalize_query;
use crate::query_repr::QuerySimilarity;
use crate::sequence_miner::JourneyContext;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversityConfig {
    /// `1.0` ranks purely by relevance to the anchor, `0.0` purely by novelty.
    pub mmr_lambda: f64,
    pub max_pairwise_sim: f64,
    pub k_out: usize,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            mmr_lambda: 0.5,
            max_pairwise_sim: 0.8,
            k_out: 5,
        }
    }
}

impl DiversityConfig {
    pub fn validate(&self) -> Result<(), AlternatorError> {
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return Err(AlternatorError::InvalidConfig(format!(
                "mmr_lambda {} outside [0, 1]",
                self.mmr_lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.max_pairwise_sim) {
            return Err(AlternatorError::InvalidConfig(format!(
                "max_pairwise_sim {} outside [0, 1]",
                self.max_pairwise_sim
            )));
        }
        if self.k_out < 1 {
            return Err(AlternatorError::InvalidConfig("k_out must be >= 1".into()));
        }
        Ok(())
    }
}

/// Drops alternates that repeat the transitional query or a mined converging query,
/// and later duplicates. Order is otherwise kept.
pub fn enforce_constraints(
    resp: &AlternatorResponse,
    journey: &JourneyContext,
) -> Result<Vec<String>, AlternatorError> {
    let norm = |q: &str| normalize_query(q).unwrap_or_else(|_| q.to_string());
    let mut forbidden: HashSet<String> = journey.converging_queries.keys().map(|q| norm(q)).collect();
    forbidden.insert(norm(&journey.transitional_query));

    let mut kept = Vec::new();
    for alt in &resp.alternate_queries {
        let Ok(q) = normalize_query(alt) else { continue };
        if forbidden.insert(q.clone()) {
            kept.push(q);
        }
    }
    if kept.is_empty() {
        Err(AlternatorError::AllFiltered)
    } else {
        Ok(kept)
    }
}

/// Greedy MMR selection order over `n` candidates.
///
/// `relevance(i)` scores candidate `i` against the anchor and `pair(i, j)` scores two
/// candidates. The first pick is the most relevant candidate; later picks maximize
/// `lambda * relevance - (1 - lambda) * max similarity to the picks so far`. Ties go
/// to the earlier candidate.
pub fn mmr_order(
    n: usize,
    relevance: impl Fn(usize) -> f64,
    pair: impl Fn(usize, usize) -> f64,
    lambda: f64,
    k: usize,
) -> Vec<usize> {
    let rel: Vec<f64> = (0..n).map(&relevance).collect();
    let mut redundancy = vec![f64::NEG_INFINITY; n];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(k.min(n));

    while order.len() < k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let score = if order.is_empty() {
                rel[i]
            } else {
                lambda * rel[i] - (1.0 - lambda) * redundancy[i]
            };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let (pick, _) = best.expect("an untaken candidate remains");
        taken[pick] = true;
        order.push(pick);
        for i in (0..n).filter(|&i| !taken[i]) {
            redundancy[i] = redundancy[i].max(pair(i, pick));
        }
    }
    order
}

/// Reorders `candidates` by MMR against `anchor`, keeping at most `k_out`.
pub fn mmr_rerank<S: QuerySimilarity + ?Sized>(
    candidates: &[String],
    anchor: &str,
    sim: &S,
    cfg: &DiversityConfig,
) -> Vec<String> {
    mmr_order(
        candidates.len(),
        |i| sim.similarity(&candidates[i], anchor),
        |i, j| sim.similarity(&candidates[i], &candidates[j]),
        cfg.mmr_lambda,
        cfg.k_out,
    )
    .into_iter()
    .map(|i| candidates[i].clone())
    .collect()
}

/// Keeps an alternate only if it stays within `max_pairwise_sim` of every alternate
/// already kept.
pub fn diversity_gate<S: QuerySimilarity + ?Sized>(
    alternates: &[String],
    sim: &S,
    cfg: &DiversityConfig,
) -> Vec<String> {
    let mut kept: Vec<String> = Vec::new();
    for alt in alternates {
        if kept.iter().all(|k| sim.similarity(alt, k) <= cfg.max_pairwise_sim) {
            kept.push(alt.clone());
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query_repr::TokenSimilarity;
    use std::collections::HashMap;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn gold_journey() -> JourneyContext {
        let mut j = JourneyContext::new("18k gold diamonds necklace");
        j.source_queries.insert("18k gold dacid yarmen".into(), 1);
        j.source_queries.insert("david yurman chain gold 18k".into(), 1);
        j.converging_queries.insert("david yurman chain gold 18k".into(), 1);
        j.converging_queries.insert("18k gold david yurman".into(), 1);
        j.support = 2;
        j
    }

    fn response(alts: &[&str]) -> AlternatorResponse {
        AlternatorResponse {
            transitional_query: "18k gold diamonds necklace".into(),
            alternate_queries: strings(alts),
        }
    }

    #[test]
    fn converging_repeat_removed() {
        let r = response(&["David Yurman Chain Gold 18K", "18k gold diamond pendant necklace"]);
        assert_eq!(
            enforce_constraints(&r, &gold_journey()).unwrap(),
            ["18k gold diamond pendant necklace"]
        );
    }

    #[test]
    fn duplicates_kept_once() {
        let r = response(&[
            "18k gold diamond pendant necklace",
            "18k white gold diamond necklace",
            "18k gold diamond pendant necklace",
        ]);
        assert_eq!(
            enforce_constraints(&r, &gold_journey()).unwrap(),
            ["18k gold diamond pendant necklace", "18k white gold diamond necklace"]
        );
    }

    #[test]
    fn all_forbidden_is_error() {
        let r = response(&[
            "david yurman chain gold 18k",
            "18k gold david yurman",
            "18k gold diamonds necklace",
        ]);
        assert!(matches!(
            enforce_constraints(&r, &gold_journey()),
            Err(AlternatorError::AllFiltered)
        ));
    }

    struct Table {
        anchor: HashMap<&'static str, f64>,
        pair: HashMap<(&'static str, &'static str), f64>,
    }

    impl QuerySimilarity for Table {
        fn similarity(&self, a: &str, b: &str) -> f64 {
            if b == "anchor" {
                return self.anchor[a];
            }
            self.pair
                .get(&(a, b))
                .or_else(|| self.pair.get(&(b, a)))
                .copied()
                .unwrap_or(1.0)
        }
    }

    #[test]
    fn three_candidate_mmr_matches_hand_greedy() {
        // relevance x 0.9, y 0.8, z 0.5; x~y 0.9, x~z 0.1, y~z 0.2
        let table = Table {
            anchor: HashMap::from([("x", 0.9), ("y", 0.8), ("z", 0.5)]),
            pair: HashMap::from([(("x", "y"), 0.9), (("x", "z"), 0.1), (("y", "z"), 0.2)]),
        };
        let cfg = DiversityConfig {
            mmr_lambda: 0.5,
            k_out: 3,
            ..Default::default()
        };
        // step 1: x (0.9)
        // step 2: y = .5*.8 - .5*.9 = -0.05, z = .5*.5 - .5*.1 = 0.20  -> z
        // step 3: y only
        let out = mmr_rerank(&strings(&["x", "y", "z"]), "anchor", &table, &cfg);
        assert_eq!(out, ["x", "z", "y"]);
    }

    #[test]
    fn lambda_one_is_stable_relevance_sort() {
        let table = Table {
            anchor: HashMap::from([("a", 0.3), ("b", 0.7), ("c", 0.3), ("d", 0.9)]),
            pair: HashMap::new(),
        };
        let cfg = DiversityConfig {
            mmr_lambda: 1.0,
            k_out: 10,
            ..Default::default()
        };
        let out = mmr_rerank(&strings(&["a", "b", "c", "d"]), "anchor", &table, &cfg);
        assert_eq!(out, ["d", "b", "a", "c"]);
    }

    #[test]
    fn single_candidate_and_cap() {
        let cfg = DiversityConfig {
            k_out: 2,
            ..Default::default()
        };
        assert_eq!(mmr_rerank(&strings(&["only"]), "a", &TokenSimilarity, &cfg), ["only"]);
        let out = mmr_rerank(&strings(&["a", "b", "c"]), "a", &TokenSimilarity, &cfg);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn near_duplicate_dropped() {
        let sim = |a: &str, b: &str| {
            if a.starts_with('n') && b.starts_with('n') {
                0.95
            } else {
                0.1
            }
        };
        let out = diversity_gate(&strings(&["n1", "x", "n2"]), &sim, &DiversityConfig::default());
        assert_eq!(out, ["n1", "x"]);
        let out = diversity_gate(
            &strings(&["a", "b", "c"]),
            &|_: &str, _: &str| 0.8,
            &DiversityConfig::default(),
        );
        assert_eq!(out, ["a", "b", "c"]);
    }

    #[test]
    fn config_validation() {
        assert!(DiversityConfig::default().validate().is_ok());
        assert!(DiversityConfig {
            k_out: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DiversityConfig {
            mmr_lambda: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
