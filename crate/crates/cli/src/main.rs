use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regkg_cli::commands::{self, IngestArgs, MockOptions, Session};
use regkg_cli::config::{AppConfig, SERVICE_KEY_ENV};
use regkg_cli::service::{self, AppState};
use regkg_cli::CliError;
use regkg_core::corpus::SourceFormat;
use regkg_core::llm::ProviderKind;
use regkg_core::section_id::Depth;

#[derive(Parser)]
#[command(
    name = "regkg",
    version,
    about = "Graph-backed question answering over numbered regulations"
)]
struct Cli {
    /// TOML or JSON file with [provider], [build], [retrieval] and [service] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the provider kind from the config.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderArg>,
    #[command(flatten)]
    mock: MockArgs,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Remote,
}

#[derive(Args)]
struct MockArgs {
    /// Per-section and per-question mock replies (JSON).
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    /// Raw mock fixtures, one JSON object per line.
    #[arg(long, global = true)]
    mock_fixtures: Option<PathBuf>,
    /// Fail on any chat call that has no fixture.
    #[arg(long, global = true)]
    mock_strict: bool,
    /// Make every mock call of this kind fail.
    #[arg(long, global = true, value_enum)]
    mock_fail: Option<MockFail>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MockFail {
    Chat,
    Embed,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Html,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthArg {
    Strict,
    Extended,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a regulation document into corpus.json.
    Ingest {
        /// File path or http(s) URL.
        #[arg(long = "in")]
        input: String,
        /// Second rendering of the same document to reconcile against.
        #[arg(long)]
        secondary: Option<String>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long, value_enum, default_value = "strict")]
        depth: DepthArg,
        /// Link stored with every section.
        #[arg(long)]
        source_url: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract, refine and link a corpus into a bundle directory.
    Build {
        /// corpus.json, HTML or @@-marked text.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer one question and print the answer JSON.
    Query {
        #[arg(long)]
        bundle: PathBuf,
        /// Include the retrieval trace.
        #[arg(long)]
        trace: bool,
        question: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Score answers against a question CSV.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, default_value = "eval_out")]
        out: PathBuf,
        /// Column header of the report table.
        #[arg(long, default_value = "regkg")]
        system: String,
    },
    /// Inspect a bundle's graphs.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Node, edge and entity counts.
    Stats {
        #[arg(long)]
        bundle: PathBuf,
    },
}

// a closed stdout (e.g. piped into `head`) is not an error worth reporting
fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    match cli.provider {
        Some(ProviderArg::Mock) => config.provider.provider_kind = ProviderKind::Mock,
        Some(ProviderArg::Remote) => {
            config.provider.provider_kind = ProviderKind::RemoteChatEmbeddings
        }
        None => {}
    }
    let mock = MockOptions {
        script: cli.mock.mock_script,
        fixtures: cli.mock.mock_fixtures,
        strict: cli.mock.mock_strict,
        fail_chat: cli.mock.mock_fail == Some(MockFail::Chat),
        fail_embed: cli.mock.mock_fail == Some(MockFail::Embed),
        latency: Duration::ZERO,
    };

    match cli.command {
        Command::Ingest {
            input,
            secondary,
            format,
            depth,
            source_url,
            out,
        } => {
            let args = IngestArgs {
                input,
                secondary,
                format: format.map(|f| match f {
                    FormatArg::Html => SourceFormat::Html,
                    FormatArg::Text => SourceFormat::MarkedPlaintext,
                }),
                depth: match depth {
                    DepthArg::Strict => Depth::Strict,
                    DepthArg::Extended => Depth::Extended,
                },
                source_url,
                out,
            };
            print_json(&commands::ingest(&args)?);
        }
        Command::Build { input, out } => {
            let (manifest, report) = commands::build(&input, &out, &config, &mock)?;
            if !report.failed_sections.is_empty() {
                log::warn!(
                    "{} sections failed extraction; see {}",
                    report.failed_sections.len(),
                    out.join(regkg_core::pipeline::RUN_REPORT_FILE).display()
                );
            }
            print_json(&manifest);
        }
        Command::Query {
            bundle,
            trace,
            question,
        } => {
            let session = Session::open(&bundle, &config, &mock)?;
            print_json(&commands::query(&session, &config, &question, trace)?);
        }
        Command::Serve { bundle, bind, port } => {
            if let Some(b) = bind {
                config.service.bind = b;
            }
            if let Some(p) = port {
                config.service.port = p;
            }
            config.service.validate()?;
            let bundle = bundle
                .or_else(|| config.service.bundle.clone())
                .ok_or_else(|| {
                    CliError::Config("no bundle given (--bundle or [service] bundle)".into())
                })?;
            let session = Session::open(&bundle, &config, &mock)?;
            let state = Arc::new(AppState::new(
                session,
                config.retrieval.clone(),
                Duration::from_secs(config.service.request_timeout_secs),
                std::env::var(SERVICE_KEY_ENV).ok(),
                config.service.cache_size,
            ));
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| CliError::Serve(e.to_string()))?;
            runtime.block_on(service::serve(state, &config.service))?;
        }
        Command::Eval {
            bundle,
            questions,
            out,
            system,
        } => {
            let session = Session::open(&bundle, &config, &mock)?;
            let run = commands::eval(&session, &config, &questions, &out, &system)?;
            let _ = write!(std::io::stdout(), "{}", run.report.to_markdown(&system));
        }
        Command::Graph {
            command: GraphCommand::Stats { bundle },
        } => print_json(&commands::stats(&bundle)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
