//! Offline evaluation of suggestion sets: CTR and conversion rate over impression
//! logs, relative deltas between two sets, and a seeded click model that
//! synthesizes impressions when no real traffic is available.
//!
//! Both rates use impressions as the denominator.
//!
//! # Click model
//!
//! For an impression of anchor `a` showing suggestions `s_0..s_{n-1}`:
//!
//! ```text
//! rel_i     = sim(s_i, a)
//! nov_i     = 1 - max_{j != i} sim(s_i, s_j)        (1 when shown alone)
//! p_click_i = decay^i * (base_click + w_rel * rel_i + w_nov * nov_i)
//! p_conv_i  = base_convert + c_rel * rel_i + c_nov * nov_i
//! ```
//!
//! The user scans top-down and clicks the first slot whose Bernoulli(p_click_i)
//! fires, then converts with probability p_conv_i. Probabilities are clamped to
//! `[0, 1]`.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query_repr::QuerySimilarity;
use crate::suggestion_store::SuggestionRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("baseline rate is zero")]
    ZeroBaseline,

    #[error("invalid eval config: {0}")]
    InvalidConfig(String),

    #[error("invalid impression at line {line}: {message}")]
    InvalidImpression { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionEvent {
    #[serde(rename = "anchor")]
    pub anchor_query: String,
    pub shown: Vec<String>,
    #[serde(rename = "clicked")]
    pub clicked_index: Option<usize>,
    pub converted: bool,
}

impl ImpressionEvent {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(i) = self.clicked_index {
            if i >= self.shown.len() {
                return Err(format!("clicked index {i} beyond {} shown", self.shown.len()));
            }
        } else if self.converted {
            return Err("conversion without a click".into());
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("impression serialization is infallible")
    }
}

pub fn read_impressions<R: BufRead>(reader: R) -> Result<Vec<ImpressionEvent>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let bad = |message: String| EvalError::InvalidImpression { line: i + 1, message };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: ImpressionEvent = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        ev.validate().map_err(bad)?;
        out.push(ev);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub impressions: u64,
    pub clicks: u64,
    pub conversions: u64,
    pub ctr: f64,
    pub cvr: f64,
}

impl MetricsReport {
    pub fn from_counts(impressions: u64, clicks: u64, conversions: u64) -> Self {
        let rate = |n: u64| {
            if impressions == 0 {
                0.0
            } else {
                n as f64 / impressions as f64
            }
        };
        MetricsReport {
            impressions,
            clicks,
            conversions,
            ctr: rate(clicks),
            cvr: rate(conversions),
        }
    }

    /// Sum of two shards.
    pub fn merge(&self, other: &MetricsReport) -> MetricsReport {
        MetricsReport::from_counts(
            self.impressions + other.impressions,
            self.clicks + other.clicks,
            self.conversions + other.conversions,
        )
    }
}

pub fn compute_metrics<'a, I>(events: I) -> MetricsReport
where
    I: IntoIterator<Item = &'a ImpressionEvent>,
{
    let (mut n, mut clicks, mut conversions) = (0, 0, 0);
    for ev in events {
        n += 1;
        if ev.clicked_index.is_some() {
            clicks += 1;
            if ev.converted {
                conversions += 1;
            }
        }
    }
    MetricsReport::from_counts(n, clicks, conversions)
}

/// Percent change of a variant over a baseline, rounded to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeDelta {
    pub ctr_delta_pct: f64,
    pub cvr_delta_pct: f64,
}

fn round1(x: f64) -> f64 {
    let r = (x * 10.0).round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn relative_delta(variant: &MetricsReport, baseline: &MetricsReport) -> Result<RelativeDelta, EvalError> {
    if baseline.ctr <= 0.0 || baseline.cvr <= 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(RelativeDelta {
        ctr_delta_pct: round1(100.0 * (variant.ctr - baseline.ctr) / baseline.ctr),
        cvr_delta_pct: round1(100.0 * (variant.cvr - baseline.cvr) / baseline.cvr),
    })
}

/// Signed percentage with one decimal: `+32.2%`, `-33.6%`, `0.0%`.
pub fn format_pct(pct: f64) -> String {
    let r = round1(pct);
    if r == 0.0 {
        "0.0%".to_string()
    } else {
        format!("{r:+.1}%")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClickModel {
    pub base_click: f64,
    pub relevance_weight: f64,
    pub novelty_weight: f64,
    /// Attention multiplier per slot further down the list.
    pub position_decay: f64,
    pub base_convert: f64,
    pub convert_relevance_weight: f64,
    pub convert_novelty_weight: f64,
    /// Suggestions shown per impression.
    pub slots: usize,
}

impl Default for ClickModel {
    fn default() -> Self {
        ClickModel {
            base_click: 0.02,
            relevance_weight: 0.10,
            novelty_weight: 0.10,
            position_decay: 0.8,
            base_convert: 0.05,
            convert_relevance_weight: 0.25,
            convert_novelty_weight: 0.25,
            slots: 5,
        }
    }
}

impl ClickModel {
    /// A model with the same click and conversion probability everywhere.
    pub fn constant(click: f64, convert: f64) -> Self {
        ClickModel {
            base_click: click,
            relevance_weight: 0.0,
            novelty_weight: 0.0,
            position_decay: 1.0,
            base_convert: convert,
            convert_relevance_weight: 0.0,
            convert_novelty_weight: 0.0,
            slots: 5,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let fields = [
            ("base_click", self.base_click),
            ("relevance_weight", self.relevance_weight),
            ("novelty_weight", self.novelty_weight),
            ("position_decay", self.position_decay),
            ("base_convert", self.base_convert),
            ("convert_relevance_weight", self.convert_relevance_weight),
            ("convert_novelty_weight", self.convert_novelty_weight),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(EvalError::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.slots == 0 {
            return Err(EvalError::InvalidConfig("slots must be >= 1".into()));
        }
        Ok(())
    }

    /// Click and conversion probability per shown slot.
    pub fn slot_probabilities<S: QuerySimilarity + ?Sized>(
        &self,
        anchor: &str,
        shown: &[String],
        sim: &S,
    ) -> Vec<(f64, f64)> {
        shown
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let rel = sim.similarity(s, anchor);
                let nov = 1.0
                    - shown
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, o)| sim.similarity(s, o))
                        .fold(0.0, f64::max);
                let attention = self.position_decay.powi(i as i32);
                let click = attention * (self.base_click + self.relevance_weight * rel + self.novelty_weight * nov);
                let convert =
                    self.base_convert + self.convert_relevance_weight * rel + self.convert_novelty_weight * nov;
                (click.clamp(0.0, 1.0), convert.clamp(0.0, 1.0))
            })
            .collect()
    }
}

/// Samples `n_impressions` impressions over `records`, anchors drawn uniformly.
/// The same seed always yields the same stream.
pub fn synthesize_replay<S: QuerySimilarity + ?Sized>(
    records: &[SuggestionRecord],
    model: &ClickModel,
    n_impressions: usize,
    seed: u64,
    sim: &S,
) -> Result<Vec<ImpressionEvent>, EvalError> {
    model.validate()?;
    if n_impressions == 0 {
        return Ok(Vec::new());
    }
    if records.is_empty() {
        return Err(EvalError::InvalidConfig("suggestion set is empty".into()));
    }

    type Slate<'r> = (&'r str, Vec<String>, Vec<(f64, f64)>);
    let prepared: Vec<Slate> = records
        .iter()
        .map(|r| {
            let shown: Vec<String> = r.alternates.iter().take(model.slots).map(|a| a.query.clone()).collect();
            let probs = model.slot_probabilities(&r.anchor_query, &shown, sim);
            (r.anchor_query.as_str(), shown, probs)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::with_capacity(n_impressions);
    for _ in 0..n_impressions {
        let (anchor, shown, probs) = &prepared[rng.gen_range(0..prepared.len())];
        let mut clicked_index = None;
        let mut converted = false;
        for (i, &(p_click, p_convert)) in probs.iter().enumerate() {
            if rng.gen_bool(p_click) {
                clicked_index = Some(i);
                converted = rng.gen_bool(p_convert);
                break;
            }
        }
        events.push(ImpressionEvent {
            anchor_query: anchor.to_string(),
            shown: shown.clone(),
            clicked_index,
            converted,
        });
    }
    Ok(events)
}

/// Side-by-side comparison of two suggestion sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline_label: String,
    pub variant_label: String,
    pub baseline: MetricsReport,
    pub variant: MetricsReport,
    pub delta: Option<RelativeDelta>,
}

impl EvalReport {
    pub fn new(
        baseline_label: impl Into<String>,
        baseline: MetricsReport,
        variant_label: impl Into<String>,
        variant: MetricsReport,
    ) -> Self {
        EvalReport {
            baseline_label: baseline_label.into(),
            variant_label: variant_label.into(),
            delta: relative_delta(&variant, &baseline).ok(),
            baseline,
            variant,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// Aligned text table: relative change first, absolute rates after.
    pub fn to_table(&self) -> String {
        let width = self.baseline_label.len().max(self.variant_label.len()).max(8);
        let mut out = String::new();
        let header = |out: &mut String| {
            let _ = writeln!(
                out,
                "{:width$}  {:>18}  {:>11}",
                "", "Click-through rate", "Conversions"
            );
        };
        let _ = writeln!(out, "Relative performance vs. {}", self.baseline_label);
        header(&mut out);
        let (ctr, cvr) = match &self.delta {
            Some(d) => (format_pct(d.ctr_delta_pct), format_pct(d.cvr_delta_pct)),
            None => ("n/a".into(), "n/a".into()),
        };
        let _ = writeln!(out, "{:width$}  {:>18}  {:>11}", self.variant_label, ctr, cvr);
        let _ = writeln!(out);
        let _ = writeln!(out, "Absolute rates");
        header(&mut out);
        for (label, m) in [
            (&self.baseline_label, &self.baseline),
            (&self.variant_label, &self.variant),
        ] {
            let _ = writeln!(
                out,
                "{:width$}  {:>18.4}  {:>11.4}   ({} impressions)",
                label, m.ctr, m.cvr, m.impressions
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query_repr::TokenSimilarity;
    use crate::suggestion_store::{Alternate, Provenance};
    use proptest::prelude::*;

    fn ev(clicked: Option<usize>, converted: bool) -> ImpressionEvent {
        ImpressionEvent {
            anchor_query: "a".into(),
            shown: vec!["x".into(), "y".into()],
            clicked_index: clicked,
            converted,
        }
    }

    fn record(anchor: &str, alts: &[&str]) -> SuggestionRecord {
        SuggestionRecord {
            anchor_query: anchor.into(),
            alternates: alts
                .iter()
                .enumerate()
                .map(|(i, q)| Alternate {
                    query: q.to_string(),
                    score: 1.0 / (i + 1) as f64,
                    provenance: Provenance::Llm,
                })
                .collect(),
            built_at_ms: 0,
            support: 1,
        }
    }

    #[test]
    fn ten_three_one() {
        let mut events = vec![ev(Some(0), true), ev(Some(1), false), ev(Some(0), false)];
        events.extend((0..7).map(|_| ev(None, false)));
        let m = compute_metrics(&events);
        assert_eq!((m.impressions, m.clicks, m.conversions), (10, 3, 1));
        assert!((m.ctr - 0.30).abs() < 1e-12);
        assert!((m.cvr - 0.10).abs() < 1e-12);
    }

    #[test]
    fn zero_and_full() {
        assert_eq!(compute_metrics(&[]), MetricsReport::default());
        let m = compute_metrics(&[ev(Some(0), true), ev(Some(1), true)]);
        assert_eq!((m.ctr, m.cvr), (1.0, 1.0));
    }

    #[test]
    fn table_one_formatting() {
        let baseline = MetricsReport {
            ctr: 0.10,
            cvr: 0.05,
            ..Default::default()
        };
        let variant = MetricsReport {
            ctr: 0.0664,
            cvr: 0.05,
            ..Default::default()
        };
        let d = relative_delta(&variant, &baseline).unwrap();
        assert_eq!(d.ctr_delta_pct, -33.6);
        assert_eq!(format_pct(d.ctr_delta_pct), "-33.6%");
        assert_eq!(format_pct(d.cvr_delta_pct), "0.0%");
        assert_eq!(format_pct(32.2), "+32.2%");
    }

    #[test]
    fn zero_baseline_rejected() {
        let baseline = MetricsReport::from_counts(10, 0, 0);
        assert_eq!(relative_delta(&baseline, &baseline), Err(EvalError::ZeroBaseline));
    }

    #[test]
    fn impression_validation() {
        assert!(ev(Some(2), false).validate().is_err());
        assert!(ev(None, true).validate().is_err());
        let bad = "{\"anchor\":\"a\",\"shown\":[\"x\"],\"clicked\":null,\"converted\":true}\n";
        assert!(matches!(
            read_impressions(bad.as_bytes()),
            Err(EvalError::InvalidImpression { line: 1, .. })
        ));
        let good = ev(Some(1), true).to_line();
        assert_eq!(good, r#"{"anchor":"a","shown":["x","y"],"clicked":1,"converted":true}"#);
        assert_eq!(read_impressions(good.as_bytes()).unwrap(), vec![ev(Some(1), true)]);
    }

    #[test]
    fn replay_is_seeded() {
        let set = [record("a b", &["a c", "b d", "e"]), record("x", &["x y"])];
        let model = ClickModel::default();
        let one = synthesize_replay(&set, &model, 500, 9, &TokenSimilarity).unwrap();
        let two = synthesize_replay(&set, &model, 500, 9, &TokenSimilarity).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.len(), 500);
        let other = synthesize_replay(&set, &model, 500, 10, &TokenSimilarity).unwrap();
        assert_ne!(one, other);
    }

    #[test]
    fn degenerate_models() {
        let set = [record("a", &["b", "c"])];
        let never = synthesize_replay(&set, &ClickModel::constant(0.0, 1.0), 300, 1, &TokenSimilarity).unwrap();
        assert_eq!(compute_metrics(&never).ctr, 0.0);
        let always = synthesize_replay(&set, &ClickModel::constant(1.0, 1.0), 300, 1, &TokenSimilarity).unwrap();
        let m = compute_metrics(&always);
        assert_eq!((m.ctr, m.cvr), (1.0, 1.0));
    }

    #[test]
    fn invalid_configs() {
        let set = [record("a", &["b"])];
        let bad = ClickModel {
            base_click: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            synthesize_replay(&set, &bad, 1, 0, &TokenSimilarity),
            Err(EvalError::InvalidConfig(_))
        ));
        let bad = ClickModel {
            slots: 0,
            ..Default::default()
        };
        assert!(synthesize_replay(&set, &bad, 1, 0, &TokenSimilarity).is_err());
        assert!(synthesize_replay(&[], &ClickModel::default(), 1, 0, &TokenSimilarity).is_err());
        assert!(synthesize_replay(&[], &ClickModel::default(), 0, 0, &TokenSimilarity)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn novelty_and_relevance_raise_click_probability() {
        let m = ClickModel::default();
        let redundant = ["a x".to_string(), "a x y".to_string()];
        let diverse = ["a x".to_string(), "a z".to_string()];
        let r = m.slot_probabilities("a", &redundant, &TokenSimilarity);
        let d = m.slot_probabilities("a", &diverse, &TokenSimilarity);
        assert!(d[0].0 > r[0].0);
        assert!(d[0].1 > r[0].1);
    }

    #[test]
    fn report_table_layout() {
        let baseline = MetricsReport::from_counts(1000, 100, 50);
        let variant = MetricsReport::from_counts(1000, 132, 69);
        let report = EvalReport::new("Intent filtered", baseline, "LLM Alternator", variant);
        let table = report.to_table();
        assert!(table.contains("Click-through rate"));
        assert!(table
            .lines()
            .any(|l| l.starts_with("LLM Alternator") && l.contains("+32.0%") && l.contains("+38.0%")));
    }

    proptest! {
        #[test]
        fn synthesized_counts_are_ordered(seed in any::<u64>(), click in 0.0f64..=1.0, conv in 0.0f64..=1.0) {
            let set = [record("a", &["b", "c", "d"]), record("e", &["f"])];
            let events = synthesize_replay(&set, &ClickModel::constant(click, conv), 200, seed, &TokenSimilarity).unwrap();
            prop_assert!(events.iter().all(|e| e.validate().is_ok()));
            let m = compute_metrics(&events);
            prop_assert!(m.conversions <= m.clicks && m.clicks <= m.impressions);
        }

        #[test]
        fn self_delta_is_zero(imp in 1u64..10_000, clicks_frac in 0.01f64..=1.0, conv_frac in 0.01f64..=1.0) {
            let clicks = ((imp as f64 * clicks_frac) as u64).max(1);
            let conv = ((clicks as f64 * conv_frac) as u64).max(1);
            let m = MetricsReport::from_counts(imp, clicks, conv);
            let d = relative_delta(&m, &m).unwrap();
            prop_assert_eq!((d.ctr_delta_pct, d.cvr_delta_pct), (0.0, 0.0));
        }

        #[test]
        fn merge_matches_concatenation(split in 0usize..40, seed in any::<u64>()) {
            let set = [record("a", &["b", "c"])];
            let events = synthesize_replay(&set, &ClickModel::constant(0.4, 0.5), 40, seed, &TokenSimilarity).unwrap();
            let (l, r) = events.split_at(split);
            prop_assert_eq!(compute_metrics(l).merge(&compute_metrics(r)), compute_metrics(&events));
        }
    }
}
