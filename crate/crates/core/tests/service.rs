use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use defer_core::deferral::{DeferralModel, Standardizer};
use defer_core::features::{Lexicon, FEATURE_COUNT};
use defer_core::service::{app, ExpertClient, ExpertClientConfig, HealthStatus, RouteRequest, RouterService, Source};
use defer_core::LabelSpace;

fn labels() -> LabelSpace {
    LabelSpace::from_names(&["EFFECTIVE", "INEFFECTIVE", "NEUTRAL"], None).unwrap()
}

/// d(x) = sigmoid(3 − 5·confidence): defers below confidence 0.6.
fn model() -> DeferralModel {
    let st = Standardizer { means: vec![0.0; FEATURE_COUNT], stds: vec![1.0; FEATURE_COUNT] };
    let mut w = vec![0.0; FEATURE_COUNT];
    w[0] = -5.0;
    DeferralModel::new(Lexicon::default(), st, w, 3.0, 0.5, labels()).unwrap()
}

fn uncertain() -> RouteRequest {
    RouteRequest { text: "no change noted".into(), base_probs: vec![0.4, 0.35, 0.25], request_id: Some("q1".into()) }
}

fn confident() -> RouteRequest {
    RouteRequest { text: "worked well".into(), base_probs: vec![0.05, 0.9, 0.05], request_id: None }
}

struct Mock {
    url: String,
    calls: Arc<AtomicUsize>,
}

/// Expert that answers `reply(call_number, headers)`.
async fn mock<F>(reply: F) -> Mock
where
    F: Fn(usize, &HeaderMap) -> (StatusCode, Value, Duration) + Send + Sync + 'static,
{
    type Shared = (Arc<AtomicUsize>, Arc<dyn Fn(usize, &HeaderMap) -> (StatusCode, Value, Duration) + Send + Sync>);
    async fn handler(State((calls, reply)): State<Shared>, headers: HeaderMap) -> (StatusCode, Json<Value>) {
        let n = calls.fetch_add(1, Ordering::SeqCst);
        let (status, body, delay) = reply(n, &headers);
        tokio::time::sleep(delay).await;
        (status, Json(body))
    }
    let calls = Arc::new(AtomicUsize::new(0));
    let state: Shared = (calls.clone(), Arc::new(reply));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, Router::new().route("/label", post(handler)).with_state(state)).await.unwrap();
    });
    Mock { url: format!("http://{addr}/label"), calls }
}

fn client(url: &str, timeout_ms: u64) -> ExpertClient {
    ExpertClient::new(ExpertClientConfig { timeout_ms, ..ExpertClientConfig::new(url) }).unwrap()
}

#[tokio::test]
async fn expert_label_passes_through() {
    let m = mock(|_, _| (StatusCode::OK, json!({"label": "EFFECTIVE"}), Duration::ZERO)).await;
    let svc = RouterService::new(Some(model()), Some(client(&m.url, 2000)));
    let resp = svc.handle_route(uncertain()).await.unwrap();
    assert_eq!(resp.source, Source::Expert);
    assert_eq!(resp.prediction, "EFFECTIVE");
    assert_eq!(resp.request_id.as_deref(), Some("q1"));
    assert!(resp.deferral_score >= resp.threshold);

    let resp = svc.handle_route(confident()).await.unwrap();
    assert_eq!(resp.source, Source::Base);
    assert_eq!(resp.prediction, "INEFFECTIVE");
    assert!(resp.deferral_score < resp.threshold);
    assert_eq!(m.calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unknown_expert_label_falls_back() {
    let m = mock(|_, _| (StatusCode::OK, json!({"label": "MAYBE"}), Duration::ZERO)).await;
    let svc = RouterService::new(Some(model()), Some(client(&m.url, 2000)));
    let resp = svc.handle_route(uncertain()).await.unwrap();
    assert_eq!(resp.source, Source::BaseFallback);
    assert_eq!(resp.prediction, "EFFECTIVE");
    assert!(resp.warning.unwrap().contains("MAYBE"));
}

#[tokio::test]
async fn slow_expert_is_cut_off_by_the_timeout() {
    let m = mock(|_, _| (StatusCode::OK, json!({"label": "NEUTRAL"}), Duration::from_secs(5))).await;
    let svc = RouterService::new(Some(model()), Some(client(&m.url, 300)));
    let started = Instant::now();
    let resp = svc.handle_route(uncertain()).await.unwrap();
    assert!(started.elapsed() < Duration::from_secs(2), "took {:?}", started.elapsed());
    assert_eq!(resp.source, Source::BaseFallback);
    assert_eq!(resp.prediction, "EFFECTIVE");
}

#[tokio::test]
async fn one_retry_after_a_server_error() {
    let m = mock(|n, _| {
        if n == 0 {
            (StatusCode::INTERNAL_SERVER_ERROR, json!({}), Duration::ZERO)
        } else {
            (StatusCode::OK, json!({"label": "NEUTRAL"}), Duration::ZERO)
        }
    })
    .await;
    let svc = RouterService::new(Some(model()), Some(client(&m.url, 2000)));
    let resp = svc.handle_route(uncertain()).await.unwrap();
    assert_eq!(resp.source, Source::Expert);
    assert_eq!(resp.prediction, "NEUTRAL");
    assert_eq!(m.calls.load(Ordering::SeqCst), 2);

    let always_failing = mock(|_, _| (StatusCode::BAD_GATEWAY, json!({}), Duration::ZERO)).await;
    let svc = RouterService::new(Some(model()), Some(client(&always_failing.url, 2000)));
    assert_eq!(svc.handle_route(uncertain()).await.unwrap().source, Source::BaseFallback);
    assert_eq!(always_failing.calls.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn bearer_token_is_forwarded() {
    let m = mock(|_, headers| {
        let ok = headers.get("authorization").and_then(|v| v.to_str().ok()) == Some("Bearer t0ken");
        if ok {
            (StatusCode::OK, json!({"label": "NEUTRAL"}), Duration::ZERO)
        } else {
            (StatusCode::UNAUTHORIZED, json!({}), Duration::ZERO)
        }
    })
    .await;
    let config = ExpertClientConfig { auth_token: Some("t0ken".into()), ..ExpertClientConfig::new(&m.url) };
    let svc = RouterService::new(Some(model()), Some(ExpertClient::new(config).unwrap()));
    assert_eq!(svc.handle_route(uncertain()).await.unwrap().source, Source::Expert);
}

#[tokio::test]
async fn without_expert_deferrals_fall_back() {
    let svc = RouterService::new(Some(model()), None);
    let resp = svc.handle_route(uncertain()).await.unwrap();
    assert_eq!(resp.source, Source::BaseFallback);
    assert!(resp.warning.unwrap().contains("disabled"));
    assert_eq!(svc.handle_route(confident()).await.unwrap().source, Source::Base);
    let h = svc.health();
    assert_eq!(h.status, "ok");
    assert!(!h.defer_enabled && !h.expert_configured);
}

async fn spawn_router(svc: RouterService) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app(Arc::new(svc))).await.unwrap();
    });
    format!("http://{addr}")
}

#[tokio::test]
async fn http_contract() {
    let base = spawn_router(RouterService::new(Some(model()), None)).await;
    let http = reqwest::Client::new();

    let health: HealthStatus = http.get(format!("{base}/v1/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.format_version, Some(1));
    assert_eq!(health.labels, vec!["EFFECTIVE", "INEFFECTIVE", "NEUTRAL"]);

    let resp = http.post(format!("{base}/v1/route")).json(&confident()).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["source"], "base");
    assert_eq!(body["prediction"], "INEFFECTIVE");

    let resp = http
        .post(format!("{base}/v1/route"))
        .json(&json!({"text": "x", "base_probs": [0.5, 0.5]}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["field"], "base_probs");

    let resp = http
        .post(format!("{base}/v1/route"))
        .json(&json!({"text": "x", "base_probs": [0.9, 0.3, -0.2]}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);

    let resp = http.post(format!("{base}/v1/route")).body("{not json").send().await.unwrap();
    assert_eq!(resp.status(), 400);

    let empty = spawn_router(RouterService::new(None, None)).await;
    let resp = http.post(format!("{empty}/v1/route")).json(&confident()).send().await.unwrap();
    assert_eq!(resp.status(), 503);
    let health: HealthStatus = http.get(format!("{empty}/v1/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health.status, "degraded");
}
