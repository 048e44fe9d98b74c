//! Extraction of alternate-query payloads from raw model output.

use std::collections::HashSet;

use serde_json::{Map, Value};

use super::{AlternatorError, AlternatorResponse};
use crate::event_log::normalize_query;

const TRANSITIONAL_KEY: &str = "transitional query";
const ALTERNATES_KEY: &str = "alternate queries";

/// First response found in `raw`, tolerating prose and code fences around it.
pub fn parse_response(raw: &str) -> Result<AlternatorResponse, AlternatorError> {
    parse_responses(raw, false)?
        .into_iter()
        .next()
        .ok_or(AlternatorError::UnparseableResponse)
}

/// Every response object in the payload. A payload may be one object or an array
/// of objects. With `strict`, the whole text must be that JSON value.
pub fn parse_responses(raw: &str, strict: bool) -> Result<Vec<AlternatorResponse>, AlternatorError> {
    let value = if strict {
        serde_json::from_str::<Value>(raw.trim())
            .ok()
            .filter(is_payload)
            .ok_or(AlternatorError::UnparseableResponse)?
    } else {
        find_payload(raw).ok_or(AlternatorError::UnparseableResponse)?
    };

    match value {
        Value::Object(obj) => Ok(vec![validate(&obj)?]),
        Value::Array(items) => items
            .iter()
            .map(|v| validate(v.as_object().expect("payload arrays hold objects")))
            .collect(),
        _ => unreachable!("payload is an object or an array"),
    }
}

fn is_payload(v: &Value) -> bool {
    match v {
        Value::Object(_) => true,
        Value::Array(items) => !items.is_empty() && items.iter().all(Value::is_object),
        _ => false,
    }
}

fn find_payload(raw: &str) -> Option<Value> {
    for (i, c) in raw.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if is_payload(&v) {
                return Some(v);
            }
        }
    }
    bare_members(raw)
}

/// Handles output that lists the members without the enclosing braces.
fn bare_members(raw: &str) -> Option<Value> {
    let start = raw.find(&format!("\"{TRANSITIONAL_KEY}\""))?;
    let tail = &raw[start..];
    tail.match_indices(']').find_map(|(j, _)| {
        let candidate = format!("{{{}}}", &tail[..=j]);
        serde_json::from_str::<Value>(&candidate).ok().filter(Value::is_object)
    })
}

fn validate(obj: &Map<String, Value>) -> Result<AlternatorResponse, AlternatorError> {
    let transitional = obj
        .get(TRANSITIONAL_KEY)
        .and_then(Value::as_str)
        .ok_or_else(|| AlternatorError::SchemaViolation(format!("missing string {TRANSITIONAL_KEY:?}")))?;
    let list = obj
        .get(ALTERNATES_KEY)
        .and_then(Value::as_array)
        .ok_or_else(|| AlternatorError::SchemaViolation(format!("missing array {ALTERNATES_KEY:?}")))?;

    let mut seen = HashSet::new();
    let mut alternates = Vec::with_capacity(list.len());
    for item in list {
        let text = item
            .as_str()
            .ok_or_else(|| AlternatorError::SchemaViolation(format!("{ALTERNATES_KEY:?} holds a non-string")))?;
        if let Ok(q) = normalize_query(text) {
            if seen.insert(q.clone()) {
                alternates.push(q);
            }
        }
    }
    if alternates.is_empty() {
        return Err(AlternatorError::SchemaViolation("no usable alternate queries".into()));
    }

    Ok(AlternatorResponse {
        transitional_query: normalize_query(transitional).unwrap_or_else(|_| transitional.to_string()),
        alternate_queries: alternates,
    })
}
