//! OpenAI-compatible chat-completions and embeddings over HTTP.
//!
//! Uses a blocking client; callers inside an async runtime must hop onto a
//! blocking thread first.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ChatRequest, Embedding, LlmError, Provider, ProviderConfig};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "REGKG_API_KEY";
const FALLBACK_KEY_ENV: &str = "OPENAI_API_KEY";

pub struct RemoteProvider {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    model: String,
    embedding_model: String,
    embedding_dim: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Embedding,
}

impl RemoteProvider {
    pub fn new(config: &ProviderConfig, api_key: String) -> Result<RemoteProvider, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        Ok(RemoteProvider {
            client,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key,
            model: config.model_name.clone(),
            embedding_model: config.embedding_model.clone(),
            embedding_dim: config.embedding_dim,
        })
    }

    /// Reads the key from `REGKG_API_KEY`, falling back to `OPENAI_API_KEY`.
    pub fn from_env(config: &ProviderConfig) -> Result<RemoteProvider, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .or_else(|_| std::env::var(FALLBACK_KEY_ENV))
            .map_err(|_| LlmError::InvalidConfig(format!("{API_KEY_ENV} is not set")))?;
        RemoteProvider::new(config, key)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = format!("{}/{path}", self.base_url);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Provider(format!("{url}: timed out"))
                } else {
                    LlmError::Provider(format!("{url}: {e}"))
                }
            })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| LlmError::Provider(format!("{url}: {e}")))?;
        if !status.is_success() {
            if text.contains("context_length_exceeded") {
                return Err(LlmError::TokenLimitExceeded {
                    detail: format!("{url}: {}", excerpt(&text)),
                });
            }
            return Err(LlmError::Provider(format!(
                "{url}: HTTP {status}: {}",
                excerpt(&text)
            )));
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Provider(format!("{url}: bad JSON: {e}")))
    }
}

fn excerpt(text: &str) -> String {
    text.chars().take(300).collect()
}

impl Provider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        });
        let value = self.post("chat/completions", &body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| LlmError::Provider(format!("unexpected chat response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Provider("chat response has no choices".into()))?;
        if choice.finish_reason.as_deref() == Some("length") {
            return Err(LlmError::TokenLimitExceeded {
                detail: format!(
                    "{} reply truncated at max_tokens={}",
                    request.template, request.max_tokens
                ),
            });
        }
        choice
            .message
            .content
            .ok_or_else(|| LlmError::Provider("chat response has no content".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, LlmError> {
        let mut body = json!({"model": self.embedding_model, "input": texts});
        if self.embedding_model.starts_with("text-embedding-3") {
            body["dimensions"] = json!(self.embedding_dim);
        }
        let value = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| LlmError::Embedding(format!("unexpected embeddings response: {e}")))?;
        let mut items = parsed.data;
        items.sort_by_key(|i| i.index);
        Ok(items.into_iter().map(|i| i.embedding).collect())
    }

    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
}
