//! Chat-completion and embedding access behind one gateway.
//!
//! The gateway owns the prompt templates, renders them, enforces each
//! template's output shape (with a single repair retry) and bounds the
//! number of provider calls in flight. Providers are either a remote
//! OpenAI-compatible HTTP endpoint or the deterministic [`MockProvider`].

mod heuristic;
mod mock;
mod prompts;
mod remote;
mod script;
mod shape;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use heuristic::split_sentences;
pub use mock::{FixtureEntry, FixtureKey, MockFixtures, MockProvider};
pub use prompts::{sha256_hex, PromptSet, PromptTemplate, TemplateId};
pub use remote::{RemoteProvider, API_KEY_ENV};
pub use script::{MockScript, QuestionScript, ScriptError, SectionScript};
pub use shape::Shape;

pub type Embedding = Vec<f64>;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider error: {0}")]
    Provider(String),
    #[error("{template} response violates its schema: {detail}")]
    SchemaViolation {
        template: TemplateId,
        detail: String,
    },
    #[error("token limit exceeded: {detail}")]
    TokenLimitExceeded { detail: String },
    #[error("template {template} slot {slot:?} is unbound")]
    MissingSlot { template: TemplateId, slot: String },
    #[error("empty input")]
    EmptyInput,
    #[error("embedding error: {0}")]
    Embedding(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    RemoteChatEmbeddings,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub provider_kind: ProviderKind,
    pub model_name: String,
    pub embedding_model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Embedding dimension; remote providers overwrite it with what they report.
    pub embedding_dim: usize,
    pub base_url: String,
    /// Provider calls allowed in flight at once.
    pub parallelism: usize,
    /// Upper bound on the estimated tokens of one rendered prompt.
    pub context_tokens: usize,
    pub request_timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            provider_kind: ProviderKind::Mock,
            model_name: "gpt-4o".to_string(),
            embedding_model: "text-embedding-3-small".to_string(),
            temperature: 0.2,
            max_tokens: 1500,
            embedding_dim: 64,
            base_url: "https://api.openai.com/v1".to_string(),
            parallelism: 4,
            context_tokens: 128_000,
            request_timeout_secs: 120,
        }
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens < 1 {
            return Err(LlmError::InvalidConfig(
                "max_tokens must be at least 1".into(),
            ));
        }
        if self.embedding_dim < 8 {
            return Err(LlmError::InvalidConfig(format!(
                "embedding_dim {} below 8",
                self.embedding_dim
            )));
        }
        if self.parallelism < 1 {
            return Err(LlmError::InvalidConfig(
                "parallelism must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One rendered chat call.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub template: TemplateId,
    pub system: String,
    pub user: String,
    /// The bindings the user text was rendered from.
    pub slots: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// 0 for the first call, 1 for the repair retry.
    pub attempt: u32,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    /// Returns the raw text content of the model reply.
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, LlmError>;

    fn embedding_dim(&self) -> usize;
}

/// Rough token estimate: four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Extra acceptance check run after the shape check.
pub type Check<'a> = &'a (dyn Fn(&Value) -> Result<(), String> + Sync);

struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    config: ProviderConfig,
    prompts: &'static PromptSet,
    permits: Arc<Permits>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("config", &self.config)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, config: ProviderConfig) -> Result<Gateway, LlmError> {
        config.validate()?;
        let permits = Arc::new(Permits {
            available: Mutex::new(config.parallelism),
            freed: Condvar::new(),
        });
        Ok(Gateway {
            provider,
            config,
            prompts: PromptSet::builtin(),
            permits,
        })
    }

    /// A gateway over a fixture-less mock provider.
    pub fn mock() -> Gateway {
        let config = ProviderConfig::mock();
        let provider = MockProvider::new(config.embedding_dim);
        Gateway::new(Arc::new(provider), config).expect("default config is valid")
    }

    /// Builds the provider named by `config`.
    pub fn from_config(
        config: ProviderConfig,
        fixtures: Option<MockFixtures>,
    ) -> Result<Gateway, LlmError> {
        config.validate()?;
        let provider: Arc<dyn Provider> = match config.provider_kind {
            ProviderKind::Mock => {
                let mut mock = MockProvider::new(config.embedding_dim);
                if let Some(f) = fixtures {
                    mock = mock.with_fixtures(f);
                }
                Arc::new(mock)
            }
            ProviderKind::RemoteChatEmbeddings => Arc::new(RemoteProvider::from_env(&config)?),
        };
        let mut config = config;
        config.embedding_dim = provider.embedding_dim();
        Gateway::new(provider, config)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn prompts(&self) -> &'static PromptSet {
        self.prompts
    }

    pub fn embedding_dim(&self) -> usize {
        self.provider.embedding_dim()
    }

    pub fn chat(
        &self,
        template: TemplateId,
        slots: &BTreeMap<String, String>,
    ) -> Result<Value, LlmError> {
        self.chat_checked(template, slots, &|_| Ok(()))
    }

    /// Like [`Gateway::chat`], with an extra check that counts as a schema
    /// violation when it fails.
    pub fn chat_checked(
        &self,
        template_id: TemplateId,
        slots: &BTreeMap<String, String>,
        check: Check<'_>,
    ) -> Result<Value, LlmError> {
        let template = self.prompts.get(template_id);
        let user = template.render(slots)?;
        let estimated = estimate_tokens(&template.system_text) + estimate_tokens(&user);
        if estimated > self.config.context_tokens {
            return Err(LlmError::TokenLimitExceeded {
                detail: format!(
                    "{template_id} prompt is ~{estimated} tokens, limit {}",
                    self.config.context_tokens
                ),
            });
        }
        let mut request = ChatRequest {
            template: template_id,
            system: template.system_text.clone(),
            user,
            slots: slots.clone(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            attempt: 0,
        };
        let raw = self.complete(&request)?;
        let violation = match accept(&template.output_schema, &raw, check) {
            Ok(value) => return Ok(value),
            Err(v) => v,
        };
        log::warn!("{template_id}: retrying after schema violation: {violation}");
        request.attempt = 1;
        request.user = format!(
            "{}\n\nYour previous reply was rejected: {violation}\nReply again with a single JSON object matching {}",
            request.user, template.schema_text
        );
        let raw = self.complete(&request)?;
        accept(&template.output_schema, &raw, check).map_err(|detail| LlmError::SchemaViolation {
            template: template_id,
            detail,
        })
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let _permit = self.permits.acquire();
        self.provider.complete(request)
    }

    /// One vector per input text, each of the provider's dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, LlmError> {
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(LlmError::EmptyInput);
        }
        let vectors = {
            let _permit = self.permits.acquire();
            self.provider.embed(texts)?
        };
        if vectors.len() != texts.len() {
            return Err(LlmError::Embedding(format!(
                "{} vectors for {} texts",
                vectors.len(),
                texts.len()
            )));
        }
        let dim = self.embedding_dim();
        for v in &vectors {
            if v.len() != dim {
                return Err(LlmError::Embedding(format!(
                    "vector of length {} (expected {dim})",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(LlmError::Embedding("non-finite entry".into()));
            }
        }
        Ok(vectors)
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding, LlmError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }
}

fn accept(shape: &Shape, raw: &str, check: Check<'_>) -> Result<Value, String> {
    let value = parse_json_reply(raw)?;
    shape.validate(&value)?;
    check(&value)?;
    Ok(value)
}

/// Parses a reply that should be one JSON object, tolerating a Markdown
/// code fence around it.
pub fn parse_json_reply(raw: &str) -> Result<Value, String> {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        text = rest.trim().trim_end_matches("```").trim();
    }
    match serde_json::from_str::<Value>(text) {
        Ok(v @ Value::Object(_)) => Ok(v),
        Ok(_) => Err("reply is JSON but not an object".to_string()),
        Err(e) => Err(format!("reply is not valid JSON ({e})")),
    }
}

pub fn slots<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
