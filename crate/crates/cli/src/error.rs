use std::path::PathBuf;

use regkg_core::corpus::IngestError;
use regkg_core::eval::EvalError;
use regkg_core::llm::{LlmError, ScriptError};
use regkg_core::pipeline::PipelineError;
use regkg_core::retrieval::RetrievalError;
use regkg_core::store::StoreError;
use thiserror::Error;

/// Runtime failures; each message starts with the stage that failed.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[ingest] {0}")]
    Ingest(#[from] IngestError),
    #[error("[provider] {0}")]
    Provider(#[from] LlmError),
    #[error("[provider] {0}")]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("[store] {0}")]
    Store(#[from] StoreError),
    #[error("[query] {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("[eval] {0}")]
    Eval(#[from] EvalError),
    #[error("[serve] {0}")]
    Serve(String),
    #[error("[io] {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
