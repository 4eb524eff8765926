//! `--config` files: one TOML or JSON document with a table per concern.

use std::path::{Path, PathBuf};

use regkg_core::llm::ProviderConfig;
use regkg_core::pipeline::BuildConfig;
use regkg_core::retrieval::RetrievalConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Env var holding the optional static API key of the service.
pub const SERVICE_KEY_ENV: &str = "REGKG_SERVICE_KEY";
pub const API_KEY_HEADER: &str = "x-api-key";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub bundle: Option<PathBuf>,
    /// Allowed CORS origins; `*` allows any. Empty disables CORS headers.
    pub cors_origins: Vec<String>,
    pub request_timeout_secs: u64,
    /// Answers kept in an LRU cache; 0 computes every request.
    pub cache_size: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".to_string(),
            port: 8080,
            bundle: None,
            cors_origins: Vec::new(),
            request_timeout_secs: 120,
            cache_size: 0,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.port == 0 {
            return Err(CliError::Config("service port must be in 1..=65535".into()));
        }
        if self.request_timeout_secs == 0 {
            return Err(CliError::Config(
                "request_timeout_secs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub provider: ProviderConfig,
    pub build: BuildConfig,
    pub retrieval: RetrievalConfig,
    pub service: ServiceConfig,
}

impl AppConfig {
    /// JSON when the extension is `.json`, TOML otherwise.
    pub fn load(path: &Path) -> Result<AppConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |e: String| CliError::Config(format!("{}: {e}", path.display()));
        let config: AppConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.provider
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.build
            .refiner
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.retrieval.top_k == 0 {
            return Err(CliError::Config(
                "retrieval top_k must be at least 1".into(),
            ));
        }
        if !(-1.0..=1.0).contains(&self.retrieval.min_sim) {
            return Err(CliError::Config(format!(
                "retrieval min_sim {} outside [-1, 1]",
                self.retrieval.min_sim
            )));
        }
        self.service.validate()
    }
}
