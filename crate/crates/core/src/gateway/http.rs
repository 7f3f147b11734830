//! HTTP backend speaking the OpenAI-compatible chat-completions and
//! embeddings wire format.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{CompletionRequest, Transport, TransportError};

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    embed_model: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        embed_model: &str,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            embed_model: embed_model.to_string(),
            agent,
        }
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, TransportError> {
        let url = format!("{}{path}", self.base_url);
        let mut request = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(classify)?;
        response
            .body_mut()
            .read_json::<serde_json::Value>()
            .map_err(|e| TransportError::Transient(format!("invalid response body: {e}")))
    }
}

/// Map transport-level failures to retryable/permanent classes: connection
/// problems, timeouts, 429 and 5xx are transient; other HTTP statuses are
/// protocol errors that retrying cannot fix.
fn classify(err: ureq::Error) -> TransportError {
    match err {
        ureq::Error::StatusCode(status) if status == 429 || (500..=599).contains(&status) => {
            TransportError::Transient(format!("http status {status}"))
        }
        ureq::Error::StatusCode(status) => TransportError::Permanent {
            status,
            message: format!("http status {status}"),
        },
        other => TransportError::Transient(other.to_string()),
    }
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

impl Transport for HttpBackend {
    fn chat(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let body = json!({
            "model": request.model_id,
            "messages": request
                .messages
                .iter()
                .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                .collect::<Vec<_>>(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let value = self.post("/v1/chat/completions", body)?;
        let parsed: ChatCompletionResponse = serde_json::from_value(value)
            .map_err(|e| TransportError::Transient(format!("unexpected completion shape: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Transient("no choices in response".to_string()))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, TransportError> {
        let body = json!({ "model": self.embed_model, "input": text });
        let value = self.post("/v1/embeddings", body)?;
        let parsed: EmbeddingsResponse = serde_json::from_value(value)
            .map_err(|e| TransportError::Transient(format!("unexpected embedding shape: {e}")))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| TransportError::Transient("no embedding in response".to_string()))
    }
}
