//! The HTTP backend against a local stub server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use dramaturg_core::gateway::{
    CompletionRequest, GatewayConfig, GatewayError, HttpBackend, HttpBackendConfig, RetryPolicy,
};
use dramaturg_core::prompt::{Prompt, PromptFamily};
use dramaturg_core::{Gateway, SamplingConfig};
use serde_json::{json, Value};

#[derive(Default)]
struct Stub {
    hits: AtomicUsize,
    fail_first: usize,
    last_body: Mutex<Option<Value>>,
    last_auth: Mutex<Option<String>>,
}

async fn complete(
    State(stub): State<Arc<Stub>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Result<Json<Value>, (StatusCode, String)> {
    let hit = stub.hits.fetch_add(1, Ordering::SeqCst);
    *stub.last_body.lock().unwrap() = Some(body.clone());
    *stub.last_auth.lock().unwrap() = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    if hit < stub.fail_first {
        return Err((StatusCode::SERVICE_UNAVAILABLE, "busy".into()));
    }
    if body["prompt"] == "reject me" {
        return Err((StatusCode::BAD_REQUEST, "no thanks".into()));
    }
    Ok(Json(json!({"text": format!("echo:{}<end>", body["seed"])})))
}

async fn serve(stub: Arc<Stub>) -> String {
    let app = Router::new().route("/v1/complete", post(complete)).with_state(stub);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1/complete")
}

fn gateway(url: String, key: Option<&str>) -> Gateway {
    let mut config = HttpBackendConfig::new(url);
    config.api_key = key.map(str::to_string);
    config.timeout = Duration::from_secs(5);
    Gateway::new(
        Arc::new(HttpBackend::new(config).unwrap()),
        GatewayConfig {
            retry: RetryPolicy {
                max_attempts: 3,
                initial_backoff: Duration::from_millis(5),
                multiplier: 2.0,
            },
            ..GatewayConfig::default()
        },
    )
}

fn prompt(text: &str) -> Prompt {
    Prompt {
        text: text.into(),
        family: PromptFamily::Title,
        stop_markers: vec!["<end>".into()],
    }
}

#[tokio::test]
async fn sends_wire_request_with_auth() {
    let stub = Arc::new(Stub::default());
    let gw = gateway(serve(stub.clone()).await, Some("sekrit"));
    let out = gw
        .complete(&prompt("hello"), &SamplingConfig::default().with_seed(9))
        .await
        .unwrap();
    assert_eq!(out.text, "echo:9<end>");
    let body = stub.last_body.lock().unwrap().clone().unwrap();
    let expected = serde_json::to_value(CompletionRequest {
        prompt: "hello".into(),
        max_tokens: 511,
        temperature: 1.0,
        top_p: 0.9,
        seed: Some(9),
    })
    .unwrap();
    assert_eq!(body, expected);
    assert_eq!(stub.last_auth.lock().unwrap().as_deref(), Some("Bearer sekrit"));
}

#[tokio::test]
async fn retries_server_errors() {
    let stub = Arc::new(Stub {
        fail_first: 2,
        ..Stub::default()
    });
    let gw = gateway(serve(stub.clone()).await, None);
    gw.complete(&prompt("hello"), &SamplingConfig::default())
        .await
        .unwrap();
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
    assert_eq!(stub.last_auth.lock().unwrap().as_deref(), None);
}

#[tokio::test]
async fn gives_up_after_budget() {
    let stub = Arc::new(Stub {
        fail_first: 10,
        ..Stub::default()
    });
    let gw = gateway(serve(stub.clone()).await, None);
    let err = gw
        .complete(&prompt("hello"), &SamplingConfig::default())
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 3, .. }));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let stub = Arc::new(Stub::default());
    let gw = gateway(serve(stub.clone()).await, None);
    let err = gw
        .complete(&prompt("reject me"), &SamplingConfig::default())
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::BackendRejected { status: 400, .. }));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unreachable_backend_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    drop(listener);
    let err = gateway(url, None)
        .complete(&prompt("hello"), &SamplingConfig::default())
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnavailable { .. }));
}
