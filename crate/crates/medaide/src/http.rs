//! Chat-completions and embeddings over HTTP.
//!
//! The wire shape is the common `/chat/completions` and `/embeddings` JSON.
//! The bearer token is read from `MEDAIDE_API_KEY` when a backend is built
//! and is never serialized anywhere.

use std::sync::Arc;
use std::time::Duration;

use medaide_core::gateway::{embed_canonical, ChatBackend, ChatReply, ChatRequest, Embedder, EmbeddingVector, GatewayError, Usage};
use serde_json::{json, Value};

pub const API_KEY_ENV: &str = "MEDAIDE_API_KEY";
const EXCERPT: usize = 240;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// One JSON POST. Status 0 stands for a connection-level failure.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpResponse, GatewayError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport { status: 0, body: e.to_string() })?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpResponse, GatewayError> {
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| GatewayError::Transport { status: 0, body: e.to_string() })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| GatewayError::Transport { status, body: e.to_string() })?;
        Ok(HttpResponse { status, body })
    }
}

/// Transport for profiles that must stay offline; every call fails.
pub struct OfflineTransport;

impl HttpTransport for OfflineTransport {
    fn post_json(&self, url: &str, _: Option<&str>, _: &Value) -> Result<HttpResponse, GatewayError> {
        Err(GatewayError::Transport { status: 0, body: format!("network disabled for this profile ({url})") })
    }
}

fn excerpt(body: &str) -> String {
    match body.char_indices().nth(EXCERPT) {
        Some((i, _)) => format!("{}...", &body[..i]),
        None => body.to_string(),
    }
}

fn retryable(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Transport { status, .. } if *status == 0 || *status == 429 || *status >= 500)
}

#[derive(Clone)]
struct Client {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
    token: Option<String>,
    retries: u32,
}

impl Client {
    fn new(transport: Arc<dyn HttpTransport>, base_url: &str, retries: u32) -> Self {
        let token = std::env::var(API_KEY_ENV).ok().filter(|t| !t.is_empty());
        Self { transport, base_url: base_url.trim_end_matches('/').to_string(), token, retries }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            let result = self.transport.post_json(&url, self.token.as_deref(), body).and_then(|r| {
                if (200..300).contains(&r.status) {
                    serde_json::from_str(&r.body).map_err(|e| GatewayError::Malformed(format!("{e}: {}", excerpt(&r.body))))
                } else {
                    Err(GatewayError::Transport { status: r.status, body: excerpt(&r.body) })
                }
            });
            match result {
                Err(e) if attempt < self.retries && retryable(&e) => attempt += 1,
                other => return other,
            }
        }
    }
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("base_url", &self.base_url)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .field("retries", &self.retries)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: Client,
}

impl HttpBackend {
    pub fn new(transport: Arc<dyn HttpTransport>, base_url: &str, retries: u32) -> Self {
        Self { client: Client::new(transport, base_url, retries) }
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        request.validate()?;
        let messages: Vec<Value> =
            request.messages.iter().map(|m| json!({"role": m.role.as_str(), "content": m.content})).collect();
        let body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let reply = self.client.post("chat/completions", &body)?;
        let choice = reply
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| GatewayError::Malformed("reply has no choices".into()))?;
        let content = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Malformed("choice has no message content".into()))?
            .to_string();
        let finish_reason = choice.get("finish_reason").and_then(Value::as_str).unwrap_or("stop").to_string();
        let usage = reply.get("usage").cloned().and_then(|u| serde_json::from_value::<Usage>(u).ok()).unwrap_or_default();
        Ok(ChatReply { content, finish_reason, usage })
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: Client,
    model: String,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(transport: Arc<dyn HttpTransport>, base_url: &str, model: &str, dimension: usize, retries: u32) -> Self {
        Self { client: Client::new(transport, base_url, retries), model: model.to_string(), dimension }
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn canonical(&self, text: &str) -> Value {
        embed_canonical(&self.model, text)
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let reply = self.client.post("embeddings", &json!({"model": self.model, "input": [text]}))?;
        let values = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Malformed("reply has no data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| GatewayError::Malformed("non-numeric embedding component".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != self.dimension {
            return Err(GatewayError::DimensionMismatch { expected: self.dimension, found: values.len() });
        }
        Ok(EmbeddingVector::new(values, format!("http:{}", self.model)))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
