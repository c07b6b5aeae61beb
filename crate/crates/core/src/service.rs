//! HTTP routing gateway.
//!
//! `POST /v1/route` scores an instance with the loaded [`DeferralModel`] and,
//! when `d(x) ≥ τ`, asks the remote expert for a label. Expert failures never
//! fail the request: the base prediction is returned with
//! `source = "base_fallback"` and a warning. `GET /v1/health` reports the loaded
//! model and whether deferral is possible.
//!
//! Expert wire contract: `POST {endpoint}` with body `{"text": "..."}`, answered
//! by `{"label": "<class name>"}`.

use std::future::Future;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::deferral::DeferralModel;
use crate::error::{Error, Result};
use crate::labels::{LabelSpace, ProbabilityDistribution};

pub const DEFAULT_EXPERT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_MAX_RETRIES: u32 = 1;

#[derive(Clone, PartialEq, Eq)]
pub struct ExpertClientConfig {
    pub endpoint_url: String,
    /// Overall budget for one expert call, retries included.
    pub timeout_ms: u64,
    pub auth_token: Option<String>,
    pub max_retries: u32,
}

impl std::fmt::Debug for ExpertClientConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExpertClientConfig")
            .field("endpoint_url", &self.endpoint_url)
            .field("timeout_ms", &self.timeout_ms)
            .field("auth_token", &self.auth_token.as_ref().map(|_| "<redacted>"))
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl ExpertClientConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        ExpertClientConfig {
            endpoint_url: endpoint_url.into(),
            timeout_ms: DEFAULT_EXPERT_TIMEOUT_MS,
            auth_token: None,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint_url.trim().is_empty() {
            return Err(Error::Config("expert endpoint URL is empty".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("expert timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ExpertRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct ExpertReply {
    label: String,
}

/// Client for the remote expert endpoint.
#[derive(Debug, Clone)]
pub struct ExpertClient {
    http: reqwest::Client,
    config: ExpertClientConfig,
}

impl ExpertClient {
    pub fn new(config: ExpertClientConfig) -> Result<Self> {
        config.validate()?;
        let http =
            reqwest::Client::builder().build().map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(ExpertClient { http, config })
    }

    pub fn config(&self) -> &ExpertClientConfig {
        &self.config
    }

    async fn attempt(&self, text: &str, labels: &LabelSpace) -> Result<usize> {
        let mut req = self.http.post(&self.config.endpoint_url).json(&ExpertRequest { text });
        if let Some(token) = &self.config.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| Error::ExpertUnavailable(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::ExpertUnavailable(format!("expert answered HTTP {status}")));
        }
        let reply: ExpertReply = resp
            .json()
            .await
            .map_err(|e| Error::ExpertUnavailable(format!("unparseable expert reply: {}", e.without_url())))?;
        labels
            .index_of(reply.label.trim())
            .ok_or_else(|| Error::ExpertUnavailable(format!("expert returned unknown label `{}`", reply.label)))
    }

    /// Asks the expert for a label, retrying up to `max_retries` times within the
    /// overall timeout.
    pub async fn call(&self, text: &str, labels: &LabelSpace) -> Result<usize> {
        let budget = Duration::from_millis(self.config.timeout_ms);
        let attempts = async {
            let mut last = None;
            for attempt in 0..=self.config.max_retries {
                match self.attempt(text, labels).await {
                    Ok(label) => return Ok(label),
                    Err(e) => {
                        tracing::debug!(attempt, error = %e, "expert call failed");
                        last = Some(e);
                    }
                }
            }
            Err(last.unwrap_or_else(|| Error::ExpertUnavailable("no attempts made".into())))
        };
        match tokio::time::timeout(budget, attempts).await {
            Ok(result) => result,
            Err(_) => Err(Error::ExpertUnavailable(format!("no answer within {} ms", self.config.timeout_ms))),
        }
    }
}

/// One-shot expert call with a fresh client.
pub async fn call_expert(text: &str, config: &ExpertClientConfig, labels: &LabelSpace) -> Result<usize> {
    ExpertClient::new(config.clone())?.call(text, labels).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub text: String,
    pub base_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Base,
    Expert,
    BaseFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    pub prediction: String,
    pub source: Source,
    pub deferral_score: f64,
    pub threshold: f64,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    /// `ok` with a model loaded, `degraded` without.
    pub status: String,
    pub format_version: Option<u32>,
    pub threshold: Option<f64>,
    pub labels: Vec<String>,
    pub expert_configured: bool,
    pub defer_enabled: bool,
}

/// Request-level failure, reported as a 4xx/5xx with a JSON body.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl RouteError {
    fn bad_request(field: Option<&str>, msg: impl Into<String>) -> Self {
        RouteError { status: 400, error: msg.into(), field: field.map(str::to_string) }
    }
}

impl IntoResponse for RouteError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Shared, read-only routing state.
#[derive(Debug)]
pub struct RouterService {
    model: Option<Arc<DeferralModel>>,
    expert: Option<ExpertClient>,
}

impl RouterService {
    pub fn new(model: Option<DeferralModel>, expert: Option<ExpertClient>) -> Self {
        RouterService { model: model.map(Arc::new), expert }
    }

    pub fn model(&self) -> Option<&DeferralModel> {
        self.model.as_deref()
    }

    pub fn health(&self) -> HealthStatus {
        let model = self.model.as_deref();
        HealthStatus {
            status: if model.is_some() { "ok" } else { "degraded" }.to_string(),
            format_version: model.map(|m| m.format_version),
            threshold: model.map(|m| m.threshold),
            labels: model.map(|m| m.label_space.class_names().to_vec()).unwrap_or_default(),
            expert_configured: self.expert.is_some(),
            defer_enabled: model.is_some() && self.expert.is_some(),
        }
    }

    pub async fn handle_route(&self, req: RouteRequest) -> Result<RouteResponse, RouteError> {
        let started = Instant::now();
        let model = self.model.as_deref().ok_or_else(|| RouteError {
            status: 503,
            error: "no deferral model loaded".into(),
            field: None,
        })?;
        let probs = ProbabilityDistribution::new(req.base_probs)
            .and_then(|p| p.check_against(&model.label_space).map(|_| p))
            .map_err(|e| RouteError::bad_request(Some("base_probs"), e.to_string()))?;
        let score = model.score(&req.text, &probs).map_err(|e| RouteError::bad_request(None, e.to_string()))?;
        let base = probs.argmax();

        let (label, source, warning) = if !model.defers(score) {
            (base, Source::Base, None)
        } else {
            match &self.expert {
                None => {
                    (base, Source::BaseFallback, Some("deferral disabled: no expert endpoint configured".to_string()))
                }
                Some(client) => match client.call(&req.text, &model.label_space).await {
                    Ok(label) => (label, Source::Expert, None),
                    Err(e) => {
                        tracing::warn!(error = %e, "expert unavailable; falling back to base prediction");
                        (base, Source::BaseFallback, Some(e.to_string()))
                    }
                },
            }
        };
        Ok(RouteResponse {
            prediction: model.label_space.name(label).unwrap_or_default().to_string(),
            source,
            deferral_score: score,
            threshold: model.threshold,
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
            request_id: req.request_id,
            warning,
        })
    }
}

async fn route_handler(State(service): State<Arc<RouterService>>, body: Bytes) -> Response {
    let req: RouteRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return RouteError::bad_request(None, format!("malformed request: {e}")).into_response(),
    };
    match service.handle_route(req).await {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn health_handler(State(service): State<Arc<RouterService>>) -> Json<HealthStatus> {
    Json(service.health())
}

pub fn app(service: Arc<RouterService>) -> Router {
    Router::new().route("/v1/route", post(route_handler)).route("/v1/health", get(health_handler)).with_state(service)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    service: Arc<RouterService>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    axum::serve(listener, app(service)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
