use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prefmem_core::dataset::{self, DataPoint, MockLabel};
use prefmem_core::evaluation::{render_report, report_documents, run_experiments, EvalConfig, Experiment, ReportFormat};
use prefmem_core::extraction::{extract, ConversationTranscript};
use prefmem_core::gateway::MockGateway;
use prefmem_core::retrieval::TopK;
use prefmem_core::selftest;
use prefmem_core::taxonomy::CategoryTaxonomy;
use prefmem_service::config::ServiceConfig;
use prefmem_service::{build_engine, build_state, http};

#[derive(Parser)]
#[command(name = "prefmem", version, about = "Category-bound long-term preference memory")]
struct Cli {
    /// TOML configuration file; secrets come from PREFMEM_API_KEY and PREFMEM_BEARER_TOKEN.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the offline mock model instead of the configured endpoint.
    #[arg(long, global = true)]
    mock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TranscriptInput {
    /// JSON file holding {"conversation_id": .., "turns": [{"speaker": "user", "text": ..}]}.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    transcript: Option<PathBuf>,
    /// A single user utterance.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    InSchema,
    OutOfSchema,
    Maintenance,
    Retrieval,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Json,
    Confusion,
}

#[derive(Subcommand)]
enum Command {
    /// Extract preference candidates from a conversation without storing them.
    Extract {
        #[command(flatten)]
        input: TranscriptInput,
    },
    /// Extract from a conversation and apply maintenance to the user's store.
    Ingest {
        #[arg(long)]
        user: String,
        #[command(flatten)]
        input: TranscriptInput,
        /// Overrides the configured storage root.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Rank a user's stored preferences against an utterance.
    Retrieve {
        #[arg(long)]
        user: String,
        #[arg(long)]
        utterance: String,
        #[arg(long, conflicts_with = "sub_category")]
        k: Option<usize>,
        /// k = the user's preference count in this sub-category.
        #[arg(long)]
        sub_category: Option<String>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Run benchmark experiments over a corpus (the bundled fixture by default).
    Eval {
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        /// Directory with datapoints.jsonl (and mock_labels.jsonl for --mock).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
        /// Also write every report document into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run the acceptance checks offline; exits nonzero on any failure.
    Selftest {
        /// Run only these criteria.
        #[arg(long)]
        criterion: Vec<u8>,
    },
}

fn config(cli: &Cli) -> Result<ServiceConfig, String> {
    let mut c = ServiceConfig::load(cli.config.as_deref()).map_err(|e| e.to_string())?;
    if cli.mock {
        c.gateway.mock = true;
    }
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn transcript(input: &TranscriptInput) -> Result<ConversationTranscript, String> {
    match (&input.transcript, &input.text) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("parsing {}: {e}", path.display()))
        }
        (None, Some(text)) => Ok(ConversationTranscript::single_utterance("cli", text.clone())),
        (None, None) => Err("give --transcript or --text".into()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), String> {
    println!("{}", serde_json::to_string_pretty(value).map_err(|e| e.to_string())?);
    Ok(())
}

fn corpus(dir: Option<&Path>, taxonomy: &CategoryTaxonomy) -> Result<(Vec<DataPoint>, Vec<MockLabel>), String> {
    let Some(dir) = dir else {
        return Ok((dataset::fixture(taxonomy), dataset::fixture_labels()));
    };
    let report = dataset::load_corpus(dir, taxonomy).map_err(|e| e.to_string())?;
    for issue in &report.issues {
        tracing::warn!(line = issue.line, id = ?issue.id, "skipped record: {}", issue.message);
    }
    let labels_file = dir.join(dataset::MOCK_LABELS_FILE);
    let labels = if dir.is_dir() && labels_file.exists() {
        dataset::load_mock_labels(dir).map_err(|e| e.to_string())?
    } else {
        Vec::new()
    };
    Ok((report.points, labels))
}

fn eval(cli: &Cli, experiment: ExperimentArg, corpus_dir: Option<&Path>, format: FormatArg, out: Option<&Path>) -> Result<(), String> {
    let config = config(cli)?;
    let taxonomy = config.load_taxonomy().map_err(|e| e.to_string())?;
    let (points, labels) = corpus(corpus_dir, &taxonomy)?;
    let experiments: Vec<Experiment> = match experiment {
        ExperimentArg::InSchema => vec![Experiment::InSchema],
        ExperimentArg::OutOfSchema => vec![Experiment::OutOfSchema],
        ExperimentArg::Maintenance => vec![Experiment::Maintenance],
        ExperimentArg::Retrieval => vec![Experiment::Retrieval],
        ExperimentArg::All => Experiment::ALL.to_vec(),
    };
    let report = if config.gateway.mock {
        let gateway = MockGateway::new(dataset::mock_script(&points, &labels));
        run_experiments(&gateway, &taxonomy, &points, &experiments, "mock", &EvalConfig::default())
    } else {
        let gateway = config.build_gateway(&taxonomy).map_err(|e| e.to_string())?;
        run_experiments(gateway.as_ref(), &taxonomy, &points, &experiments, "live", &EvalConfig::default())
    };
    let format = match format {
        FormatArg::Table => ReportFormat::PlainTable,
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Confusion => ReportFormat::ConfusionGrid,
    };
    print!("{}", render_report(&report, &experiments, format).map_err(|e| e.to_string())?);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
        for (name, body) in report_documents(&report).map_err(|e| e.to_string())? {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| format!("writing {}: {e}", path.display()))?;
        }
    }
    Ok(())
}

fn serve(cli: &Cli, listen: Option<String>) -> Result<(), String> {
    let mut config = config(cli)?;
    if let Some(l) = listen {
        config.listen = l;
    }
    let addr = config.listen_addr().map_err(|e| e.to_string())?;
    let state = build_state(&config).map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| format!("binding {addr}: {e}"))?;
        let bound = listener.local_addr().map_err(|e| e.to_string())?;
        tracing::info!(%bound, mock = config.gateway.mock, "serving");
        println!("listening on {bound}");
        axum::serve(listener, http::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| e.to_string())
    })
}

fn run_selftest(criteria: &[u8]) -> Result<bool, String> {
    let selected: Vec<u8> = if criteria.is_empty() {
        selftest::CRITERIA.iter().map(|(c, _)| *c).collect()
    } else {
        criteria.to_vec()
    };
    let mut ok = true;
    for c in selected {
        let result = selftest::run(c);
        println!("{result}");
        ok &= result.passed();
    }
    Ok(ok)
}

fn run(cli: &Cli) -> Result<bool, String> {
    match &cli.command {
        Command::Extract { input } => {
            let config = config(cli)?;
            let transcript = transcript(input)?;
            let taxonomy = config.load_taxonomy().map_err(|e| e.to_string())?;
            let gateway = config.build_gateway(&taxonomy).map_err(|e| e.to_string())?;
            let outcome = extract(gateway.as_ref(), &transcript, &taxonomy.compile_schema()).map_err(|e| e.to_string())?;
            print_json(&outcome)?;
        }
        Command::Ingest { user, input, store } => {
            let mut config = config(cli)?;
            if let Some(s) = store {
                config.storage_root = s.clone();
            }
            let transcript = transcript(input)?;
            let engine = build_engine(&config).map_err(|e| e.to_string())?;
            print_json(&engine.ingest_conversation(user, &transcript).map_err(|e| e.to_string())?)?;
        }
        Command::Retrieve {
            user,
            utterance,
            k,
            sub_category,
            store,
        } => {
            let mut config = config(cli)?;
            if let Some(s) = store {
                config.storage_root = s.clone();
            }
            let engine = build_engine(&config).map_err(|e| e.to_string())?;
            let k = match (k, sub_category) {
                (Some(k), _) => Some(TopK::Fixed(*k)),
                (None, Some(sub)) => Some(TopK::Dynamic {
                    sub_category: sub.clone(),
                }),
                (None, None) => None,
            };
            print_json(&engine.retrieve(user, utterance, k).map_err(|e| e.to_string())?)?;
        }
        Command::Eval {
            experiment,
            corpus,
            format,
            out,
        } => eval(cli, *experiment, corpus.as_deref(), *format, out.as_deref())?,
        Command::Serve { listen } => serve(cli, listen.clone())?,
        Command::Selftest { criterion } => return run_selftest(criterion),
    }
    Ok(true)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
