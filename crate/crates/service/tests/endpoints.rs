use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use qimrag_core::feedback::LOG_FILE_NAME;
use qimrag_core::fixtures;
use qimrag_core::pipeline::Outcome;
use qimrag_core::providers::{ProviderSpec, Providers, ProvidersConfig};
use qimrag_service::wire::QueryResponse;
use qimrag_service::{router, AppState};

struct Reply {
    status: StatusCode,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|_| panic!("not json: {}", String::from_utf8_lossy(&self.body)))
    }

    fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<String>) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router(Arc::clone(state)).oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, body }
}

async fn post(state: &Arc<AppState>, uri: &str, body: Value) -> Reply {
    call(state, "POST", uri, Some(body.to_string())).await
}

async fn get(state: &Arc<AppState>, uri: &str) -> Reply {
    call(state, "GET", uri, None).await
}

fn open(dir: &Path, providers: Providers) -> Arc<AppState> {
    Arc::new(AppState::open(dir, providers).unwrap())
}

async fn ingest_corpus(state: &Arc<AppState>) -> usize {
    let mut total = 0;
    for doc in fixtures::corpus() {
        let r = post(state, "/ingest", json!({"doc_id": doc.doc_id, "text": doc.text})).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        let n = r.json()["chunks_created"].as_u64().unwrap() as usize;
        assert!(n >= 1);
        total += n;
    }
    total
}

fn feedback_body(rating: i64) -> Value {
    json!({
        "question": "How do I apply?",
        "final_answer": "Fill out the online interest form.",
        "references": ["6#x#0"],
        "rating": rating,
        "comment": "clear"
    })
}

#[tokio::test]
async fn health_reports_size_and_stub_mode() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Providers::stubs());
    let h = get(&state, "/health").await;
    assert_eq!(h.status, StatusCode::OK);
    let v = h.json();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["collection_size"], 0);
    for role in ["embedder", "fine_tuned", "foundational", "qa_generator"] {
        assert_eq!(v["providers"][role], "stub");
    }
    ingest_corpus(&state).await;
    assert!(get(&state, "/health").await.json()["collection_size"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn ingest_is_idempotent_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Providers::stubs());
    let total = ingest_corpus(&state).await;
    assert_eq!(state.collection().count(), total);
    for doc in fixtures::corpus() {
        assert!(!state.collection().doc_chunks(doc.doc_id).is_empty());
    }

    let again = post(&state, "/ingest", json!({"doc_id": "6", "text": fixtures::corpus()[5].text})).await;
    assert_eq!(again.json()["chunks_created"], 0);
    assert_eq!(state.collection().count(), total);

    let changed = post(&state, "/ingest", json!({"doc_id": "7", "text": "A short replacement overview."})).await;
    assert_eq!(changed.json()["chunks_created"], 1);
    assert_eq!(state.collection().doc_chunks("7").len(), 1);

    assert_eq!(post(&state, "/ingest", json!({"doc_id": "8", "text": "   "})).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(post(&state, "/ingest", json!({"doc_id": "", "text": "x y"})).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(post(&state, "/ingest", json!({"text": "no id"})).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(&state, "POST", "/ingest", Some("{not json".into())).await.status,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn dimension_conflict_is_409() {
    let dir = tempfile::tempdir().unwrap();
    {
        let state = open(dir.path(), Providers::stubs());
        post(&state, "/ingest", json!({"doc_id": "1", "text": "tiny houses for youth"})).await;
    }
    let cfg = ProvidersConfig {
        embedder: ProviderSpec {
            dimension: Some(64),
            ..ProviderSpec::stub("hash")
        },
        ..ProvidersConfig::default()
    };
    let state = open(dir.path(), cfg.build().unwrap());
    let r = post(&state, "/ingest", json!({"doc_id": "2", "text": "board meets monthly"})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn query_returns_filtered_judged_references() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Providers::stubs());
    assert_eq!(post(&state, "/query", json!({"question": "How do I apply?"})).await.status, StatusCode::NOT_FOUND);
    ingest_corpus(&state).await;

    let threshold = 0.9;
    let r = post(
        &state,
        "/query",
        json!({"question": "How do I apply to the village?", "options": {"k": 5, "threshold": threshold, "q": 16}}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let resp: QueryResponse = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(resp.outcome, Outcome::Answered);
    assert!(!resp.final_answer.is_empty());
    assert!(!resp.references.is_empty());
    assert_eq!(resp.references[0].doc_id, "6");
    for reference in &resp.references {
        assert!(reference.distance <= threshold);
        assert!(reference.qim_score.is_some());
        assert!((reference.distance - (1.0 - reference.cosine)).abs() < 1e-12);
    }
    let raw = r.json();
    assert!(raw["references"][0].get("embedding").is_none());

    let k3 = post(&state, "/query", json!({"question": "youth housing programs", "options": {"k": 3, "threshold": 2.0}})).await;
    assert!(k3.json()["references"].as_array().unwrap().len() <= 3);

    let none = post(&state, "/query", json!({"question": "zebra quantum saxophone", "options": {"threshold": 0.0}})).await;
    assert_eq!(none.status, StatusCode::OK);
    assert_eq!(none.json()["outcome"], "no_relevant_content");
    assert_eq!(none.json()["references"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn query_rejects_bad_options() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Providers::stubs());
    ingest_corpus(&state).await;
    for options in [json!({"q": 1}), json!({"k": 0}), json!({"threshold": -1.0}), json!({"bins": 4})] {
        let r = post(&state, "/query", json!({"question": "apply", "options": options})).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{options}");
    }
    assert_eq!(post(&state, "/query", json!({"question": "  "})).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn generator_failure_is_502_with_degraded_answer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ProvidersConfig {
        foundational: ProviderSpec::stub("fail"),
        ..ProvidersConfig::default()
    };
    let state = open(dir.path(), cfg.build().unwrap());
    ingest_corpus(&state).await;
    let r = post(&state, "/query", json!({"question": "How do I apply?", "options": {"threshold": 1.0}})).await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    let resp: QueryResponse = serde_json::from_slice(&r.body).unwrap();
    assert!(resp.degraded);
    assert_eq!(resp.final_answer, resp.answer1);
    assert!(!resp.warnings.is_empty());
}

#[tokio::test]
async fn feedback_appends_durably() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join(LOG_FILE_NAME);
    let state = open(dir.path(), Providers::stubs());

    let r = post(&state, "/feedback", feedback_body(5)).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.json()["id"].as_str().unwrap().starts_with("fb-"));
    let before = std::fs::read(&log).unwrap();
    assert_eq!(String::from_utf8_lossy(&before).lines().count(), 1);

    for bad in [6, 0, -1] {
        assert_eq!(post(&state, "/feedback", feedback_body(bad)).await.status, StatusCode::BAD_REQUEST);
    }
    assert_eq!(std::fs::read(&log).unwrap(), before);

    post(&state, "/feedback", feedback_body(3)).await;
    let after = std::fs::read(&log).unwrap();
    assert!(after.starts_with(&before));
    assert_eq!(String::from_utf8_lossy(&after).lines().count(), 2);
}

#[tokio::test]
async fn export_merges_feedback_by_rating_and_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let line = regex_like_guanaco;
    {
        let state = open(dir.path(), Providers::stubs());
        ingest_corpus(&state).await;
        let base = get(&state, "/export/training").await;
        assert_eq!(base.status, StatusCode::OK);
        assert!(!base.text().is_empty());
        assert!(base.text().lines().all(line));
        assert!(!base.text().contains("Fill out the online interest form."));

        post(&state, "/feedback", feedback_body(5)).await;
        let mut low = feedback_body(3);
        low["question"] = json!("Who is on the board?");
        low["final_answer"] = json!("Community leaders and artists.");
        post(&state, "/feedback", low).await;

        let with = get(&state, "/export/training?min_rating=4").await.text();
        assert!(with.contains("### Human: How do I apply? ### Assistant: Fill out the online interest form."));
        assert!(!with.contains("Who is on the board?"));
        let strict = get(&state, "/export/training?min_rating=5").await.text();
        assert!(!strict.contains("Who is on the board?"));
        let loose = get(&state, "/export/training?min_rating=3").await.text();
        assert!(loose.contains("Who is on the board?"));
        assert_eq!(get(&state, "/export/training?min_rating=9").await.status, StatusCode::BAD_REQUEST);
    }
    let state = open(dir.path(), Providers::stubs());
    let after = get(&state, "/export/training?min_rating=4").await.text();
    assert!(after.contains("Fill out the online interest form."));
    assert!(after.lines().all(line));
    let all = get(&state, "/export/training?split=all").await.text().lines().count();
    let train = after.lines().count();
    let test = get(&state, "/export/training?split=test").await.text().lines().count();
    assert_eq!(all, train + test);
    assert!(test >= 1);
}

fn regex_like_guanaco(line: &str) -> bool {
    let Some(rest) = line.strip_prefix("### Human: ") else {
        return false;
    };
    match rest.split_once(" ### Assistant: ") {
        Some((q, a)) => !q.is_empty() && !a.is_empty(),
        None => false,
    }
}

#[tokio::test]
async fn export_with_no_pairs_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Providers::stubs());
    let r = get(&state, "/export/training").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.text(), "");
}
