//! Anchor query → ranked alternates, persisted as JSONL snapshots and served
//! read-only over HTTP.

mod server;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use server::{related, router, serve, RelatedBody, RelatedEntry};

use crate::event_log::normalize_query;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid suggestion record: {0}")]
    InvariantViolation(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("corrupt snapshot at line {line}: {message}")]
    CorruptSnapshot { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Llm,
    Mined,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Llm => "llm",
            Provenance::Mined => "mined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternate {
    #[serde(rename = "q")]
    pub query: String,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    #[serde(rename = "anchor")]
    pub anchor_query: String,
    pub alternates: Vec<Alternate>,
    #[serde(rename = "built_at")]
    pub built_at_ms: u64,
    pub support: u64,
}

impl SuggestionRecord {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::InvariantViolation(m));
        match normalize_query(&self.anchor_query) {
            Ok(n) if n == self.anchor_query => {}
            _ => return bad(format!("anchor {:?} is not normalized", self.anchor_query)),
        }
        if self.alternates.is_empty() {
            return bad(format!("{:?} has no alternates", self.anchor_query));
        }
        for a in &self.alternates {
            if !(0.0..=1.0).contains(&a.score) {
                return bad(format!("score {} of {:?} outside [0, 1]", a.score, a.query));
            }
            if a.query == self.anchor_query {
                return bad(format!("{:?} suggests itself", self.anchor_query));
            }
        }
        if self.alternates.windows(2).any(|w| w[1].score > w[0].score) {
            return bad(format!("scores of {:?} increase", self.anchor_query));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }
}

/// In-memory record map keyed by normalized anchor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuggestionStore {
    records: BTreeMap<String, SuggestionRecord>,
}

impl SuggestionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the record for its anchor.
    pub fn put(&mut self, record: SuggestionRecord) -> Result<(), StoreError> {
        record.validate()?;
        self.records.insert(record.anchor_query.clone(), record);
        Ok(())
    }

    /// Looks up `query` after normalizing it.
    pub fn get(&self, query: &str) -> Option<&SuggestionRecord> {
        let key = normalize_query(query).ok()?;
        self.records.get(&key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in anchor order.
    pub fn records(&self) -> impl Iterator<Item = &SuggestionRecord> {
        self.records.values()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in self.records.values() {
            writeln!(w, "{}", r.to_line())?;
        }
        w.flush()
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        let mut store = SuggestionStore::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let corrupt = |message: String| StoreError::CorruptSnapshot { line: i + 1, message };
            if line.trim().is_empty() {
                continue;
            }
            let record: SuggestionRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            store.put(record).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(store)
    }

    /// Writes the snapshot next to `path` and renames it into place.
    pub fn snapshot(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("jsonl.tmp");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

impl FromIterator<SuggestionRecord> for SuggestionStore {
    /// Collects valid records, later anchors win. Invalid records are skipped.
    fn from_iter<I: IntoIterator<Item = SuggestionRecord>>(iter: I) -> Self {
        let mut store = SuggestionStore::new();
        for r in iter {
            let _ = store.put(r);
        }
        store
    }
}

/// Shared read handle whose content is replaced whole.
#[derive(Debug, Clone, Default)]
pub struct SharedStore(Arc<RwLock<Arc<SuggestionStore>>>);

impl SharedStore {
    pub fn new(store: SuggestionStore) -> Self {
        SharedStore(Arc::new(RwLock::new(Arc::new(store))))
    }

    /// The snapshot current at call time; unaffected by later swaps.
    pub fn current(&self) -> Arc<SuggestionStore> {
        self.0.read().expect("store lock poisoned").clone()
    }

    pub fn swap(&self, store: SuggestionStore) {
        *self.0.write().expect("store lock poisoned") = Arc::new(store);
    }

    /// Loads `path` fully, then swaps it in. The old snapshot stays on error.
    pub fn reload(&self, path: &Path) -> Result<usize, StoreError> {
        let store = SuggestionStore::load(path)?;
        let n = store.len();
        self.swap(store);
        Ok(n)
    }
}
