mod commands;
mod config;

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{CliError, Outcome};
use crate::config::{CliConfig, Overrides};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FATAL: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "kleio", version, about = "Question answering over private document corpora")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Config file (default: ~/.config/kleio/config.toml)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Document store directory
    #[arg(long, global = true, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Vector index directory
    #[arg(long, global = true, value_name = "DIR")]
    index: Option<PathBuf>,
    /// Embeddings endpoint; switches to the HTTP embedder
    #[arg(long, global = true, value_name = "URL")]
    embed_url: Option<String>,
    /// Embedding model name sent to the endpoint
    #[arg(long, global = true, value_name = "NAME")]
    embed_model: Option<String>,
    /// Chat completions endpoint, or "mock"
    #[arg(long, global = true, value_name = "URL")]
    llm_url: Option<String>,
    /// Model identifier sent to the chat endpoint
    #[arg(long, global = true, value_name = "ID")]
    model: Option<String>,
    /// Replace the model with scripted replies: a JSON array of
    /// {"contains": "...", "reply": "..."} objects
    #[arg(long, global = true, value_name = "FILE")]
    mock_script: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add a file or directory of .txt/.pdf documents to the store and index
    Ingest {
        path: PathBuf,
    },
    /// Answer one question against the index
    Ask {
        question: String,
        /// Number of chunks to retrieve
        #[arg(long, short = 'k', default_value_t = 4, allow_hyphen_values = true)]
        chunks: usize,
    },
    /// Answer every question of a CSV and write a report CSV
    Batch {
        #[arg(long = "in", value_name = "Q.csv")]
        input: PathBuf,
        /// Report path; with several chunk counts, one report per count is
        /// written next to it as <stem>.k<K>.csv
        #[arg(long = "out", value_name = "R.csv")]
        output: PathBuf,
        /// Chunks per question; repeatable
        #[arg(long, short = 'k', value_delimiter = ',', default_values_t = [0, 4, 8], allow_hyphen_values = true)]
        chunks: Vec<usize>,
        /// Answer rows concurrently; the report is identical
        #[arg(long)]
        parallel: bool,
    },
    /// Aggregate pass/fail grades into an accuracy table
    Grade {
        /// Report the grades refer to; every grade must match one of its rows
        #[arg(long, value_name = "R.csv")]
        report: Option<PathBuf>,
        #[arg(long, value_name = "G.csv")]
        grades: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Extract person records from pages separated by form feeds
    Extract {
        #[arg(long = "in", value_name = "pages.txt")]
        input: PathBuf,
        #[arg(long = "out", value_name = "people.csv")]
        output: PathBuf,
        /// Gold records CSV to diff against
        #[arg(long, value_name = "gold.csv")]
        gold: Option<PathBuf>,
    },
    /// Run the HTTP service until interrupted
    Serve(ServeArgs),
    /// Print word counts over the document store
    Stats,
    /// Print the effective configuration as TOML
    Config,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = kleio_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Permit binding a non-loopback address
    #[arg(long)]
    pub allow_remote: bool,
    /// Directory of static web assets served at /
    #[arg(long = "static", value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
    /// Append every answered turn to this JSONL file
    #[arg(long, value_name = "FILE")]
    pub session_log: Option<PathBuf>,
    /// Allowed CORS origin; repeatable. Any origin when omitted
    #[arg(long = "cors-origin", value_name = "ORIGIN")]
    pub cors_origins: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
}

fn resolve_config(g: &GlobalArgs) -> Result<CliConfig, CliError> {
    let env: HashMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with("KLEIO_")).collect();
    let home = std::env::var_os("HOME").map(PathBuf::from);
    let overrides = Overrides {
        store_dir: g.store.clone(),
        index_dir: g.index.clone(),
        embed_url: g.embed_url.clone(),
        embed_model: g.embed_model.clone(),
        llm_url: g.llm_url.clone(),
        model_id: g.model.clone(),
    };
    CliConfig::resolve(g.config.as_deref(), home.as_deref(), &env, &overrides).map_err(CliError::fatal)
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let cfg = resolve_config(&cli.global)?;
    let script = cli.global.mock_script.as_deref();
    match cli.command {
        Command::Ingest { path } => commands::ingest(&cfg, &path),
        Command::Ask { question, chunks } => commands::ask(&cfg, script, &question, chunks),
        Command::Batch { input, output, chunks, parallel } => {
            commands::batch(&cfg, script, &input, &output, &chunks, parallel)
        }
        Command::Grade { report, grades, format } => {
            let format = match format {
                Format::Markdown => kleio_core::grading::TableFormat::Markdown,
                Format::Csv => kleio_core::grading::TableFormat::Csv,
            };
            commands::grade(report.as_deref(), &grades, format)
        }
        Command::Extract { input, output, gold } => {
            commands::extract(&cfg, script, &input, &output, gold.as_deref())
        }
        Command::Serve(args) => commands::serve(&cfg, script, &args),
        Command::Stats => commands::stats(&cfg),
        Command::Config => commands::show_config(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::from(EXIT_OK),
        Ok(Outcome::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("kleio: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
