//! Behavioral event log parsing, query normalization and session reconstruction.
//!
//! The log is UTF-8 JSONL, one event per line:
//!
//! ```text
//! {"sid":"s1","ts":10,"kind":"query","q":"iphone 12"}
//! {"sid":"s1","ts":11,"kind":"click","item":"i7"}
//! {"sid":"s1","ts":12,"kind":"bbowac","sub":"buy","item":"i9"}
//! ```

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventLogError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("query is empty after normalization")]
    EmptyAfterNormalization,
}

/// Conversion-signal subtypes: buy, bid, offer, watch, ask, cart click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BbowacKind {
    Buy,
    Bid,
    Offer,
    Watch,
    Ask,
    Cart,
}

impl BbowacKind {
    pub const ALL: [BbowacKind; 6] = [
        BbowacKind::Buy,
        BbowacKind::Bid,
        BbowacKind::Offer,
        BbowacKind::Watch,
        BbowacKind::Ask,
        BbowacKind::Cart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BbowacKind::Buy => "buy",
            BbowacKind::Bid => "bid",
            BbowacKind::Offer => "offer",
            BbowacKind::Watch => "watch",
            BbowacKind::Ask => "ask",
            BbowacKind::Cart => "cart",
        }
    }
}

impl fmt::Display for BbowacKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BbowacKind {
    type Err = EventLogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BbowacKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EventLogError::MalformedRecord(format!("unknown bbowac subtype {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// A search issued by the user. The text is kept raw.
    QueryIssued {
        query_text: String,
    },
    ItemClick {
        item_id: String,
    },
    Bbowac {
        subtype: BbowacKind,
        item_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawEvent {
    pub session_id: String,
    pub timestamp_ms: u64,
    pub kind: EventKind,
}

impl RawEvent {
    pub fn query(session_id: impl Into<String>, timestamp_ms: u64, text: impl Into<String>) -> Self {
        RawEvent {
            session_id: session_id.into(),
            timestamp_ms,
            kind: EventKind::QueryIssued {
                query_text: text.into(),
            },
        }
    }

    pub fn click(session_id: impl Into<String>, timestamp_ms: u64, item: impl Into<String>) -> Self {
        RawEvent {
            session_id: session_id.into(),
            timestamp_ms,
            kind: EventKind::ItemClick { item_id: item.into() },
        }
    }

    pub fn bbowac(
        session_id: impl Into<String>,
        timestamp_ms: u64,
        subtype: BbowacKind,
        item: impl Into<String>,
    ) -> Self {
        RawEvent {
            session_id: session_id.into(),
            timestamp_ms,
            kind: EventKind::Bbowac {
                subtype,
                item_id: item.into(),
            },
        }
    }

    pub fn is_bbowac(&self) -> bool {
        matches!(self.kind, EventKind::Bbowac { .. })
    }

    pub fn query_text(&self) -> Option<&str> {
        match &self.kind {
            EventKind::QueryIssued { query_text } => Some(query_text),
            _ => None,
        }
    }

    /// Item id for click and bbowac events.
    pub fn item_id(&self) -> Option<&str> {
        match &self.kind {
            EventKind::ItemClick { item_id } | EventKind::Bbowac { item_id, .. } => Some(item_id),
            EventKind::QueryIssued { .. } => None,
        }
    }

    /// Serializes to one JSONL record (no trailing newline).
    pub fn to_line(&self) -> String {
        let wire = match &self.kind {
            EventKind::QueryIssued { query_text } => WireEvent {
                sid: self.session_id.clone(),
                ts: self.timestamp_ms,
                kind: "query".into(),
                q: Some(query_text.clone()),
                item: None,
                sub: None,
            },
            EventKind::ItemClick { item_id } => WireEvent {
                sid: self.session_id.clone(),
                ts: self.timestamp_ms,
                kind: "click".into(),
                q: None,
                item: Some(item_id.clone()),
                sub: None,
            },
            EventKind::Bbowac { subtype, item_id } => WireEvent {
                sid: self.session_id.clone(),
                ts: self.timestamp_ms,
                kind: "bbowac".into(),
                q: None,
                item: Some(item_id.clone()),
                sub: Some(subtype.as_str().into()),
            },
        };
        serde_json::to_string(&wire).expect("event serialization is infallible")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireEvent {
    sid: String,
    ts: u64,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    item: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sub: Option<String>,
}

/// Parses and validates one JSONL record.
pub fn parse_event_line(line: &str) -> Result<RawEvent, EventLogError> {
    let wire: WireEvent = serde_json::from_str(line).map_err(|e| EventLogError::MalformedRecord(e.to_string()))?;

    let required_item = |item: Option<String>| -> Result<String, EventLogError> {
        match item {
            Some(id) if !id.is_empty() => Ok(id),
            _ => Err(EventLogError::MalformedRecord(format!(
                "{} event without item id",
                wire.kind
            ))),
        }
    };

    let kind = match wire.kind.as_str() {
        "query" => {
            let text = wire
                .q
                .clone()
                .ok_or_else(|| EventLogError::MalformedRecord("query event without q".into()))?;
            normalize_query(&text)
                .map_err(|_| EventLogError::MalformedRecord(format!("query {text:?} is empty after normalization")))?;
            EventKind::QueryIssued { query_text: text }
        }
        "click" => EventKind::ItemClick {
            item_id: required_item(wire.item.clone())?,
        },
        "bbowac" => {
            let sub = wire
                .sub
                .as_deref()
                .ok_or_else(|| EventLogError::MalformedRecord("bbowac event without sub".into()))?;
            let subtype = sub.parse()?;
            EventKind::Bbowac {
                subtype,
                item_id: required_item(wire.item.clone())?,
            }
        }
        other => return Err(EventLogError::MalformedRecord(format!("unknown kind {other:?}"))),
    };

    Ok(RawEvent {
        session_id: wire.sid,
        timestamp_ms: wire.ts,
        kind,
    })
}

/// Valid events plus a count of skipped lines.
#[derive(Debug, Default)]
pub struct ParsedLog {
    pub events: Vec<RawEvent>,
    pub skipped: usize,
}

/// Parses a whole log. Blank lines are ignored, malformed lines are counted.
pub fn read_events<R: BufRead>(reader: R) -> std::io::Result<ParsedLog> {
    let mut out = ParsedLog::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_event_line(&line) {
            Ok(ev) => out.events.push(ev),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Canonical query form: NFC, lowercase, only letters, digits, spaces, `-` and `&`,
/// single spaces, trimmed.
pub fn normalize_query(text: &str) -> Result<String, EventLogError> {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else if c.is_alphanumeric() || c == '-' || c == '&' {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    // lowercasing can decompose, re-compose what survived the filter
    let out: String = out.nfc().collect();
    if out.is_empty() {
        Err(EventLogError::EmptyAfterNormalization)
    } else {
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: String,
    pub events: Vec<RawEvent>,
}

/// Groups events by session id. Sessions come out in first-seen order, each sorted
/// by timestamp with input order kept for ties.
pub fn reconstruct_sessions<I>(events: I) -> Vec<Session>
where
    I: IntoIterator<Item = RawEvent>,
{
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut sessions: Vec<Session> = Vec::new();
    for ev in events {
        let slot = match index.get(&ev.session_id) {
            Some(&i) => i,
            None => {
                index.insert(ev.session_id.clone(), sessions.len());
                sessions.push(Session {
                    session_id: ev.session_id.clone(),
                    events: Vec::new(),
                });
                sessions.len() - 1
            }
        };
        sessions[slot].events.push(ev);
    }
    for s in &mut sessions {
        s.events.sort_by_key(|e| e.timestamp_ms);
    }
    sessions
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_query_record() {
        let ev = parse_event_line(r#"{"sid":"s1","ts":10,"kind":"query","q":"iphone 12"}"#).unwrap();
        assert_eq!(ev, RawEvent::query("s1", 10, "iphone 12"));
    }

    #[test]
    fn parses_bbowac_record() {
        let ev = parse_event_line(r#"{"sid":"s1","ts":12,"kind":"bbowac","sub":"buy","item":"i9"}"#).unwrap();
        assert_eq!(ev, RawEvent::bbowac("s1", 12, BbowacKind::Buy, "i9"));
    }

    #[test]
    fn query_text_kept_raw() {
        let ev = parse_event_line(r#"{"sid":"s","ts":1,"kind":"query","q":"  iPhone 12 "}"#).unwrap();
        assert_eq!(ev.query_text(), Some("  iPhone 12 "));
    }

    #[test]
    fn rejects_malformed_records() {
        let bad = [
            r#"{"sid":"s1","ts":5}"#,
            r#"{"sid":"s1","ts":5,"kind":"scroll"}"#,
            r#"{"sid":"s1","ts":5,"kind":"query"}"#,
            r#"{"sid":"s1","ts":5,"kind":"query","q":"!!!"}"#,
            r#"{"sid":"s1","ts":5,"kind":"click"}"#,
            r#"{"sid":"s1","ts":5,"kind":"click","item":""}"#,
            r#"{"sid":"s1","ts":5,"kind":"bbowac","item":"i1"}"#,
            r#"{"sid":"s1","ts":5,"kind":"bbowac","sub":"steal","item":"i1"}"#,
            r#"{"sid":"s1","ts":-5,"kind":"click","item":"i1"}"#,
            r#"not json"#,
        ];
        for line in bad {
            assert!(
                matches!(parse_event_line(line), Err(EventLogError::MalformedRecord(_))),
                "{line}"
            );
        }
    }

    #[test]
    fn read_events_counts_skips() {
        let log = "{\"sid\":\"a\",\"ts\":1,\"kind\":\"query\",\"q\":\"x\"}\n\ngarbage\n{\"sid\":\"a\",\"ts\":2,\"kind\":\"click\",\"item\":\"i\"}\n";
        let parsed = read_events(log.as_bytes()).unwrap();
        assert_eq!(parsed.events.len(), 2);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_query("  iPhone  12 ").unwrap(), "iphone 12");
        assert_eq!(normalize_query("tiffany & co.").unwrap(), "tiffany & co");
        assert_eq!(normalize_query("iphone 12 128-gb").unwrap(), "iphone 12 128-gb");
        assert_eq!(normalize_query("!!!"), Err(EventLogError::EmptyAfterNormalization));
        assert_eq!(normalize_query("   "), Err(EventLogError::EmptyAfterNormalization));
        assert_eq!(normalize_query("Cafe\u{301}\tLatte").unwrap(), "caf\u{e9} latte");
    }

    #[test]
    fn sessions_grouped_and_sorted() {
        let events = vec![
            RawEvent::query("s1", 5, "b"),
            RawEvent::query("s2", 1, "x"),
            RawEvent::query("s1", 1, "a"),
            RawEvent::click("s2", 0, "i"),
        ];
        let sessions = reconstruct_sessions(events);
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].session_id, "s1");
        assert_eq!(sessions[0].events[0].query_text(), Some("a"));
        assert_eq!(sessions[1].events[0].item_id(), Some("i"));
    }

    #[test]
    fn single_event_session() {
        let sessions = reconstruct_sessions(vec![RawEvent::query("s", 3, "q")]);
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].events.len(), 1);
        assert!(reconstruct_sessions(Vec::new()).is_empty());
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let events = vec![
            RawEvent::query("s", 7, "first"),
            RawEvent::query("s", 7, "second"),
            RawEvent::query("s", 3, "zero"),
            RawEvent::query("s", 7, "third"),
        ];
        let texts: Vec<_> = reconstruct_sessions(events)[0]
            .events
            .iter()
            .map(|e| e.query_text().unwrap().to_string())
            .collect();
        assert_eq!(texts, ["zero", "first", "second", "third"]);
    }

    fn arb_event() -> impl Strategy<Value = RawEvent> {
        let sid = "[a-z0-9]{1,4}";
        let item = "[a-zA-Z0-9_\\-]{1,6}";
        prop_oneof![
            (sid, any::<u64>(), "[a-zA-Z0-9 &]{0,6}[a-z][a-zA-Z0-9 .!]{0,10}")
                .prop_map(|(s, t, q)| RawEvent::query(s, t, q)),
            (sid, any::<u64>(), item).prop_map(|(s, t, i)| RawEvent::click(s, t, i)),
            (sid, any::<u64>(), 0usize..6, item).prop_map(|(s, t, k, i)| RawEvent::bbowac(s, t, BbowacKind::ALL[k], i)),
        ]
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in any::<String>()) {
            if let Ok(once) = normalize_query(&s) {
                prop_assert_eq!(normalize_query(&once).unwrap(), once);
            }
        }

        #[test]
        fn line_round_trip(ev in arb_event()) {
            prop_assert_eq!(parse_event_line(&ev.to_line()).unwrap(), ev);
        }

        #[test]
        fn sessions_preserve_event_multiset(events in proptest::collection::vec(arb_event(), 0..40)) {
            let sessions = reconstruct_sessions(events.clone());
            let mut flat: Vec<String> =
                sessions.iter().flat_map(|s| s.events.iter().map(RawEvent::to_line)).collect();
            let mut input: Vec<String> = events.iter().map(RawEvent::to_line).collect();
            flat.sort();
            input.sort();
            prop_assert_eq!(flat, input);
            for s in &sessions {
                prop_assert!(s.events.iter().all(|e| e.session_id == s.session_id));
                prop_assert!(s.events.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms));
            }
        }
    }
}
