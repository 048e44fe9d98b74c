//! Read-only HTTP API.
//!
//! - `GET /related?q=<text>`: 200 with the record, 404 on a miss, 400 when `q` is
//!   missing or empty after normalization.
//! - `GET /healthz`: 200 with the number of records.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};

use super::{SharedStore, SuggestionStore};
use crate::event_log::normalize_query;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedEntry {
    pub q: String,
    pub score: f64,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedBody {
    pub query: String,
    pub alternates: Vec<RelatedEntry>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

#[derive(Serialize)]
struct HealthBody {
    status: &'static str,
    records: usize,
}

fn to_bytes<T: Serialize>(body: &T) -> Vec<u8> {
    serde_json::to_vec(body).expect("response bodies serialize")
}

fn json<T: Serialize>(status: StatusCode, body: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], to_bytes(body)).into_response()
}

/// Status and body for a lookup against one snapshot.
pub fn related(store: &SuggestionStore, q: Option<&str>) -> (StatusCode, Vec<u8>) {
    let Some(raw) = q else {
        return (StatusCode::BAD_REQUEST, to_bytes(&ErrorBody { error: "missing_query" }));
    };
    let Ok(query) = normalize_query(raw) else {
        return (StatusCode::BAD_REQUEST, to_bytes(&ErrorBody { error: "empty_query" }));
    };
    match store.get(&query) {
        Some(record) => {
            let body = RelatedBody {
                query,
                alternates: record
                    .alternates
                    .iter()
                    .map(|a| RelatedEntry {
                        q: a.query.clone(),
                        score: a.score,
                        provenance: a.provenance.as_str().to_string(),
                    })
                    .collect(),
            };
            (StatusCode::OK, to_bytes(&body))
        }
        None => (StatusCode::NOT_FOUND, to_bytes(&ErrorBody { error: "not_found" })),
    }
}

async fn related_handler(State(store): State<SharedStore>, Query(params): Query<HashMap<String, String>>) -> Response {
    let snapshot = store.current();
    let (status, body) = related(&snapshot, params.get("q").map(String::as_str));
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn health_handler(State(store): State<SharedStore>) -> Response {
    let records = store.current().len();
    json(StatusCode::OK, &HealthBody { status: "ok", records })
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/related", get(related_handler))
        .route("/healthz", get(health_handler))
        .with_state(store)
}

fn modified(path: &Path) -> Option<SystemTime> {
    std::fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// Serves `store` on `addr` until ctrl-c. With `watch`, the snapshot file is polled
/// and swapped in whenever its modification time changes.
pub async fn serve(store: SharedStore, addr: SocketAddr, watch: Option<(PathBuf, Duration)>) -> std::io::Result<()> {
    if let Some((path, every)) = watch {
        let store = store.clone();
        tokio::spawn(async move {
            let mut seen = modified(&path);
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                let now = modified(&path);
                if now == seen {
                    continue;
                }
                seen = now;
                let (s, p) = (store.clone(), path.clone());
                match tokio::task::spawn_blocking(move || s.reload(&p)).await {
                    Ok(Ok(n)) => eprintln!("reloaded {} ({n} records)", path.display()),
                    Ok(Err(e)) => eprintln!("reload of {} failed, keeping old snapshot: {e}", path.display()),
                    Err(e) => eprintln!("reload task failed: {e}"),
                }
            }
        });
    }

    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving on {}", listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suggestion_store::{Alternate, Provenance, SuggestionRecord};
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    fn store() -> SharedStore {
        let mut s = SuggestionStore::new();
        s.put(SuggestionRecord {
            anchor_query: "iphone case".into(),
            alternates: vec![
                Alternate {
                    query: "iphone magsafe case".into(),
                    score: 1.0,
                    provenance: Provenance::Llm,
                },
                Alternate {
                    query: "iphone 11 case".into(),
                    score: 0.5,
                    provenance: Provenance::Mined,
                },
            ],
            built_at_ms: 0,
            support: 4,
        })
        .unwrap();
        SharedStore::new(s)
    }

    async fn get(uri: &str) -> (StatusCode, String) {
        let resp = router(store())
            .oneshot(Request::builder().uri(uri).body(Body::empty()).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    #[tokio::test]
    async fn related_hit() {
        let (status, body) = get("/related?q=iPhone%20Case").await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(
            body,
            r#"{"query":"iphone case","alternates":[{"q":"iphone magsafe case","score":1.0,"provenance":"llm"},{"q":"iphone 11 case","score":0.5,"provenance":"mined"}]}"#
        );
    }

    #[tokio::test]
    async fn related_errors() {
        assert_eq!(
            get("/related?q=android").await,
            (StatusCode::NOT_FOUND, r#"{"error":"not_found"}"#.into())
        );
        assert_eq!(get("/related?q=%20%20").await.0, StatusCode::BAD_REQUEST);
        assert_eq!(get("/related").await.0, StatusCode::BAD_REQUEST);
    }

    #[tokio::test]
    async fn health() {
        assert_eq!(
            get("/healthz").await,
            (StatusCode::OK, r#"{"status":"ok","records":1}"#.into())
        );
    }
}
