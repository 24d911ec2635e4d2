//! Thin async client for the query service.

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sgq_core::api::*;

pub use sgq_core::api;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach server: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server replied {status}: {message}")]
    Server { status: StatusCode, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client { base, http: reqwest::Client::new() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn call<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&impl Serialize>) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|e| e.error).unwrap_or(text);
        Err(ClientError::Server { status, message })
    }

    pub async fn health(&self) -> Result<()> {
        self.call::<serde_json::Value>(Method::GET, "/v1/health", None::<&()>).await.map(drop)
    }

    pub async fn plan(&self, req: &PlanRequest) -> Result<PlanResponse> {
        self.call(Method::POST, "/v1/plan", Some(req)).await
    }

    pub async fn run(&self, req: &RunRequest) -> Result<RunResponse> {
        self.call(Method::POST, "/v1/run", Some(req)).await
    }

    pub async fn check(&self, req: &CheckRequest) -> Result<CheckResponse> {
        self.call(Method::POST, "/v1/check", Some(req)).await
    }

    pub async fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        self.call(Method::POST, "/v1/gen", Some(req)).await
    }

    pub async fn open(&self, req: &OpenSession) -> Result<SessionInfo> {
        self.call(Method::POST, "/v1/queries", Some(req)).await
    }

    pub async fn status(&self, id: u64) -> Result<SessionInfo> {
        self.call(Method::GET, &format!("/v1/queries/{id}"), None::<&()>).await
    }

    pub async fn push(&self, id: u64, req: &PushEdges) -> Result<PushResponse> {
        self.call(Method::POST, &format!("/v1/queries/{id}/edges"), Some(req)).await
    }

    pub async fn close(&self, id: u64) -> Result<CloseResponse> {
        self.call(Method::DELETE, &format!("/v1/queries/{id}"), None::<&()>).await
    }
}
