//! What each verb does, minus argument parsing and printing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use regkg_core::corpus::{
    extract_sections, fetch_html, read_corpus_json, reconcile, write_corpus_json, ExtractOptions,
    ReconcileReport, SectionNode, SourceFormat, DEFAULT_FETCH_TIMEOUT,
};
use regkg_core::eval::{read_questions, run_eval, EvalRun};
use regkg_core::llm::{Gateway, MockFixtures, MockProvider, MockScript, ProviderKind, TemplateId};
use regkg_core::pipeline::{build_bundle, RunReport};
use regkg_core::retrieval::{Answer, Engine};
use regkg_core::section_id::Depth;
use regkg_core::store::{Bundle, Manifest};
use serde::Serialize;

use crate::config::AppConfig;
use crate::error::CliError;

pub const RECONCILE_REPORT_FILE: &str = "reconcile_report.json";

/// Mock-provider knobs; ignored for remote providers.
#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    pub script: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    /// Fail on any chat call without a fixture.
    pub strict: bool,
    pub fail_chat: bool,
    pub fail_embed: bool,
    pub latency: Duration,
}

impl MockOptions {
    fn is_set(&self) -> bool {
        self.script.is_some()
            || self.fixtures.is_some()
            || self.strict
            || self.fail_chat
            || self.fail_embed
    }
}

/// The gateway named by the config. Scripted sections must exist in `corpus`.
pub fn gateway(
    config: &AppConfig,
    mock: &MockOptions,
    corpus: &[SectionNode],
) -> Result<Gateway, CliError> {
    let provider_config = config.provider.clone();
    provider_config.validate()?;
    if provider_config.provider_kind == ProviderKind::RemoteChatEmbeddings {
        if mock.is_set() {
            log::warn!("mock options are ignored for the remote provider");
        }
        return Ok(Gateway::from_config(provider_config, None)?);
    }
    let dim = provider_config.embedding_dim;
    let mut provider = match &mock.script {
        Some(path) => MockScript::read(path)?.provider(dim, corpus)?,
        None => MockProvider::new(dim),
    };
    if let Some(path) = &mock.fixtures {
        provider = provider.with_fixtures(MockFixtures::read_jsonl(path)?);
    }
    if mock.strict {
        provider = provider.strict_for(TemplateId::ALL);
    }
    if mock.fail_chat {
        provider = provider.failing_chat();
    }
    if mock.fail_embed {
        provider = provider.failing_embed();
    }
    if !mock.latency.is_zero() {
        provider = provider.with_latency(mock.latency);
    }
    Ok(Gateway::new(Arc::new(provider), provider_config)?)
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

fn format_of(source: &str) -> SourceFormat {
    let lower = source.to_ascii_lowercase();
    if is_url(source) || lower.ends_with(".html") || lower.ends_with(".htm") {
        SourceFormat::Html
    } else {
        SourceFormat::MarkedPlaintext
    }
}

fn read_source(source: &str) -> Result<String, CliError> {
    if is_url(source) {
        Ok(fetch_html(source, &BTreeMap::new(), DEFAULT_FETCH_TIMEOUT)
            .map_err(regkg_core::corpus::IngestError::from)?
            .body)
    } else {
        std::fs::read_to_string(source).map_err(|e| CliError::Io {
            path: source.into(),
            source: e,
        })
    }
}

/// Reads `corpus.json`, an HTML page or `@@`-marked text, chosen by extension.
pub fn load_corpus(path: &Path, depth: Depth) -> Result<Vec<SectionNode>, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(read_corpus_json(path)?);
    }
    let source = path.to_string_lossy();
    let raw = read_source(&source)?;
    let options = ExtractOptions {
        depth,
        ..ExtractOptions::default()
    };
    Ok(extract_sections(&raw, format_of(&source), &options)?)
}

#[derive(Debug, Clone)]
pub struct IngestArgs {
    /// File path or http(s) URL.
    pub input: String,
    /// A second rendering of the same document to compare against.
    pub secondary: Option<String>,
    pub format: Option<SourceFormat>,
    pub depth: Depth,
    pub source_url: Option<String>,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub sections: usize,
    pub heading_only: usize,
    pub reconcile: Option<ReconcileReport>,
}

pub fn ingest(args: &IngestArgs) -> Result<IngestSummary, CliError> {
    let extract = |source: &str| -> Result<Vec<SectionNode>, CliError> {
        let raw = read_source(source)?;
        let options = ExtractOptions {
            depth: args.depth,
            source_url: args
                .source_url
                .clone()
                .or_else(|| is_url(source).then(|| source.to_string())),
            ..ExtractOptions::default()
        };
        Ok(extract_sections(
            &raw,
            args.format.unwrap_or_else(|| format_of(source)),
            &options,
        )?)
    };
    let nodes = extract(&args.input)?;
    let reconcile = match &args.secondary {
        Some(s) => {
            let report = reconcile(&nodes, &extract(s)?);
            if !report.matched {
                log::warn!(
                    "{} sections differ between the two sources",
                    report.discrepancies.len()
                );
            }
            let path = args.out.with_file_name(RECONCILE_REPORT_FILE);
            let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })?;
            Some(report)
        }
        None => None,
    };
    write_corpus_json(&args.out, &nodes)?;
    Ok(IngestSummary {
        sections: nodes.len(),
        heading_only: nodes.iter().filter(|n| n.is_heading_only()).count(),
        reconcile,
    })
}

pub fn build(
    input: &Path,
    out: &Path,
    config: &AppConfig,
    mock: &MockOptions,
) -> Result<(Manifest, RunReport), CliError> {
    let corpus = load_corpus(input, Depth::Extended)?;
    let gw = gateway(config, mock, &corpus)?;
    let output = build_bundle(corpus, &gw, &config.build)?;
    let manifest = output.save(out)?;
    Ok((manifest, output.report))
}

/// The loaded bundle together with a gateway over it.
pub struct Session {
    pub bundle: Arc<Bundle>,
    pub gateway: Arc<Gateway>,
}

impl Session {
    pub fn open(
        bundle: &Path,
        config: &AppConfig,
        mock: &MockOptions,
    ) -> Result<Session, CliError> {
        let bundle = Bundle::load(bundle)?;
        let gateway = gateway(config, mock, &bundle.corpus)?;
        if gateway.embedding_dim() != bundle.schema.dim() {
            return Err(CliError::Config(format!(
                "provider embeds into {} dimensions but the bundle was built with {}",
                gateway.embedding_dim(),
                bundle.schema.dim()
            )));
        }
        Ok(Session {
            bundle: Arc::new(bundle),
            gateway: Arc::new(gateway),
        })
    }

    pub fn engine(&self, config: &AppConfig) -> Engine<'_> {
        Engine::new(&self.bundle, &self.gateway, config.retrieval.clone())
    }
}

pub fn query(
    session: &Session,
    config: &AppConfig,
    question: &str,
    trace: bool,
) -> Result<Answer, CliError> {
    let answer = session.engine(config).answer_question(question)?;
    Ok(if trace {
        answer
    } else {
        answer.without_trace()
    })
}

pub fn eval(
    session: &Session,
    config: &AppConfig,
    questions: &Path,
    out: &Path,
    system: &str,
) -> Result<EvalRun, CliError> {
    let records = read_questions(questions)?;
    let run = run_eval(&records, &session.engine(config))?;
    run.write(out, system)?;
    Ok(run)
}

#[derive(Debug, Serialize)]
pub struct GraphStats {
    pub manifest: Manifest,
    pub graph: regkg_core::dng::DngStats,
}

pub fn stats(bundle: &Path) -> Result<GraphStats, CliError> {
    let bundle = Bundle::load(bundle)?;
    Ok(GraphStats {
        graph: bundle.dng.stats(),
        manifest: bundle.manifest(),
    })
}
