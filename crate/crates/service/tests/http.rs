use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use claw_service::http::router;
use claw_service::Service;
use futures::StreamExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(Service::open(dir.path(), 5).unwrap());
    (dir, router(svc))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

/// SSE frames as `(id, event, data)`, read until the stream ends.
async fn sse(app: &Router, uri: &str, last_event_id: Option<u64>) -> Vec<(u64, String, Value)> {
    let mut req = Request::builder().uri(uri);
    if let Some(id) = last_event_id {
        req = req.header("last-event-id", id.to_string());
    }
    let resp = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut text = String::new();
    let mut stream = resp.into_body().into_data_stream();
    while let Some(chunk) = stream.next().await {
        text.push_str(std::str::from_utf8(&chunk.unwrap()).unwrap());
    }
    text.split("\n\n")
        .filter(|f| f.contains("data:"))
        .map(|frame| {
            let field = |name: &str| frame.lines().find_map(|l| l.strip_prefix(name)).unwrap().trim().to_string();
            (field("id:").parse().unwrap(), field("event:"), serde_json::from_str(&field("data:")).unwrap())
        })
        .collect()
}

#[tokio::test]
async fn session_lifecycle_over_http() {
    let (_d, app) = app();
    let (st, created) = call(&app, "POST", "/sessions", None).await;
    assert_eq!(st, StatusCode::CREATED);
    assert_eq!(created["version"], 1);
    let id = created["session_id"].as_str().unwrap().to_string();

    let (st, proposal) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({ "text": "CREATE scene WITH table, mug ON table" }))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(proposal["objective"]["deviation"], 0.0);
    let pid = proposal["plan_id"].as_str().unwrap().to_string();

    let (st, trace) = call(&app, "POST", &format!("/sessions/{id}/plans/{pid}/approve"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(trace["status"], "completed");
    let (st, again) = call(&app, "POST", &format!("/sessions/{id}/plans/{pid}/approve"), None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(again["error"]["code"], "already-executed");

    let (_, state) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(state["head"], trace["head"]);
    assert_eq!(state["context"]["scene"]["entities"].as_array().unwrap().len(), 2);
    assert_eq!(state["attention_units"], 1.0);

    let (_, traces) = call(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    assert_eq!(traces["traces"][0]["records"].as_array().unwrap().len(), 3);

    let first = state["history"][0].as_str().unwrap();
    let (st, rb) = call(&app, "POST", &format!("/sessions/{id}/rollback/{first}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(rb["head"], first);
}

#[tokio::test]
async fn errors_are_structured() {
    let (_d, app) = app();
    let (st, body) = call(&app, "POST", "/sessions/nope/turns", Some(json!({ "text": "CREATE scene WITH mug" }))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown-session");

    let (_, created) = call(&app, "POST", "/sessions", Some(json!({ "seed": 9 }))).await;
    let id = created["session_id"].as_str().unwrap();
    let (st, body) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({ "text": "bake a cake" }))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "unparsable-intent");
    assert!(body["error"]["hint"].as_str().unwrap().contains("CREATE scene"));

    let (st, _) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({ "txt": 1 }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (_, state) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(state["config"]["seed"], 9);
}

#[tokio::test]
async fn event_stream_is_ordered_and_resumable() {
    let (_d, app) = app();
    let (_, created) = call(&app, "POST", "/sessions", None).await;
    let id = created["session_id"].as_str().unwrap().to_string();
    let (_, p) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({ "text": "CREATE scene WITH mug, bowl" }))).await;
    let pid = p["plan_id"].as_str().unwrap();
    call(&app, "POST", &format!("/sessions/{id}/plans/{pid}/approve"), None).await;

    let uri = format!("/sessions/{id}/events?follow=false");
    let all = sse(&app, &uri, None).await;
    let ids: Vec<u64> = all.iter().map(|(i, ..)| *i).collect();
    assert_eq!(ids, (0..all.len() as u64).collect::<Vec<_>>());
    assert_eq!(all[0].1, "session_created");
    let (_, last_kind, last) = all.last().unwrap();
    assert_eq!(last_kind, "workflow_finished");
    assert_eq!(last["deviation"]["total"], 0.0);

    let resumed = sse(&app, &uri, Some(2)).await;
    assert_eq!(resumed.first().unwrap().0, 3);
    assert_eq!(resumed, all[3..].to_vec());
}

#[tokio::test]
async fn live_stream_sees_events_appended_later() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(Service::open(dir.path(), 5).unwrap());
    let app = router(svc.clone());
    let h = svc.create_session(None).unwrap();
    let id = h.state().session_id;
    let req = Request::builder().uri(format!("/sessions/{id}/events")).header("last-event-id", "0").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let mut stream = resp.into_body().into_data_stream();
    let writer = tokio::task::spawn_blocking(move || {
        let out = h.turn(claw_core::intent::UserTurn::text("CREATE scene WITH cube")).unwrap();
        h.approve(&out.plan_id).unwrap();
    });
    let mut text = String::new();
    while !text.contains("event: workflow_finished") {
        let chunk = tokio::time::timeout(std::time::Duration::from_secs(10), stream.next()).await.unwrap().unwrap().unwrap();
        text.push_str(std::str::from_utf8(&chunk).unwrap());
    }
    writer.await.unwrap();
    assert!(text.contains("id: 1\n"));
    assert!(!text.contains("id: 0\n"));
}

#[tokio::test]
async fn assets_list_and_ingest() {
    let (_d, app) = app();
    let (_, listed) = call(&app, "GET", "/assets", None).await;
    assert!(listed["assets"].as_array().unwrap().iter().any(|a| a["id"] == "mug_01"));
    let (st, ingested) = call(&app, "POST", "/assets", Some(json!({ "source": { "kind": "catalog", "category": "drill" } }))).await;
    assert_eq!(st, StatusCode::CREATED);
    assert_eq!(ingested["asset"]["category"], "drill");
    assert_eq!(ingested["asset"]["descriptor"]["extent_m"], json!([0.25, 0.25, 0.25]));
    let (st, missing) = call(&app, "POST", "/assets", Some(json!({ "source": { "kind": "catalog", "category": "yacht" } }))).await;
    assert_eq!(st, StatusCode::BAD_GATEWAY);
    assert_eq!(missing["error"]["code"], "execution-failed");
}

#[tokio::test]
async fn partial_session_config_is_accepted() {
    let (_d, app) = app();
    let body = json!({
        "seed": 4,
        "cost": { "lambda": 100.0 },
        "faults": { "seed": 4, "rules": { "spawn-asset": { "rate": 1.0, "mode": "error_before_mutation" } } }
    });
    let (st, created) = call(&app, "POST", "/sessions", Some(body)).await;
    assert_eq!(st, StatusCode::CREATED, "{created}");
    let id = created["session_id"].as_str().unwrap();
    let (_, state) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(state["config"]["cost"]["lambda"], 100.0);
    assert_eq!(state["config"]["cost"]["max_depth"], 16);
    let (_, p) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({ "text": "CREATE scene WITH mug" }))).await;
    let pid = p["plan_id"].as_str().unwrap();
    let (st, trace) = call(&app, "POST", &format!("/sessions/{id}/plans/{pid}/approve"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(trace["status"], "completed-after-recovery");
}
