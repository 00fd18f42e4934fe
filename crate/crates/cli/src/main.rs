use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use arcmem_cli::commands::{self, PreprocessEvent};
use arcmem_cli::{AppConfig, CliError, Services};
use arcmem_core::evaluation::render_table;
use arcmem_core::gateway::GatewayMode;
use arcmem_core::preprocess::suggest_duplicate_characters;
use arcmem_core::{EpisodeKey, SeriesId};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "arcmem", version, about = "Narrative arc memory for TV series")]
struct Cli {
    /// TOML config file (default: ./arcmem.toml when present).
    #[arg(long, global = true, env = "ARCMEM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Directory of recorded LLM responses.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    mode: Option<GatewayMode>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Verb {
    /// Stage the plot files of a season directory.
    Ingest {
        #[arg(long)]
        series: SeriesId,
        /// Directory holding S01E01_plot.txt and friends.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Simplify, resolve pronouns and normalize characters.
    Preprocess {
        #[arg(long)]
        series: SeriesId,
        /// Only this episode, e.g. S01E02.
        #[arg(long)]
        episode: Option<EpisodeKey>,
        /// Pronoun context window, target sentence included.
        #[arg(long)]
        window: Option<usize>,
        /// Jaccard cut for the duplicate-character report.
        #[arg(long)]
        jaccard_threshold: Option<f64>,
        #[arg(long)]
        force: bool,
    },
    /// Run the extraction agents over preprocessed episodes.
    Extract {
        #[arg(long)]
        series: SeriesId,
        #[arg(long)]
        season: u32,
        #[arg(long)]
        episode: Option<u32>,
        /// Re-run episodes that were already processed.
        #[arg(long)]
        force: bool,
    },
    /// Score stored arcs against a gold standard.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        overrides: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Canonical JSON dump of every series.
    Export {
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

fn emit<T: Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer(&mut out, value);
    let _ = writeln!(out);
    let _ = out.flush();
}

fn load_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut cfg = AppConfig::load(cli.config.as_deref())?;
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(w) = &cli.workspace {
        cfg.workspace = w.clone();
    }
    if let Some(f) = &cli.fixtures {
        cfg.fixtures_dir = f.clone();
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    match &cli.verb {
        Verb::Preprocess {
            window,
            jaccard_threshold,
            ..
        } => {
            if let Some(w) = window {
                cfg.pronoun_window = *w;
            }
            if let Some(j) = jaccard_threshold {
                cfg.jaccard_threshold = *j;
            }
        }
        Verb::Serve { bind: Some(b) } => cfg.bind = b.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct DuplicateReport<'a> {
    event: &'static str,
    first: &'a str,
    second: &'a str,
    score: f64,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    let svc = Services::open(cfg, None)?;
    match cli.verb {
        Verb::Ingest { series, dir } => {
            for e in commands::ingest(&svc, &series, &dir)? {
                emit(&e);
            }
        }
        Verb::Preprocess {
            series,
            episode,
            force,
            ..
        } => {
            commands::preprocess(&svc, &series, episode, force, &mut |e: &PreprocessEvent| emit(e))?;
            let store = &svc.memory.relational;
            for s in suggest_duplicate_characters(store, &series, svc.config.jaccard_threshold)? {
                let (a, b) = (store.load_character(&s.first)?, store.load_character(&s.second)?);
                emit(&DuplicateReport {
                    event: "duplicate_suggestion",
                    first: &a.preferred_name,
                    second: &b.preferred_name,
                    score: s.score,
                });
            }
        }
        Verb::Extract {
            series,
            season,
            episode,
            force,
        } => {
            commands::extract(&svc, &series, season, episode, force, &mut |e| emit(e))?;
        }
        Verb::Evaluate {
            gold,
            overrides,
            format,
        } => {
            let report = commands::evaluate(&svc, &gold, overrides.as_deref())?;
            match format {
                Format::Json => emit(&report),
                Format::Table => print!("{}", render_table(&report)),
            }
        }
        Verb::Export { out } => {
            let text = commands::export_text(&svc)?;
            match out {
                Some(p) => std::fs::write(&p, text).map_err(CliError::io(&p))?,
                None => print!("{text}"),
            }
        }
        Verb::Serve { .. } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Server(e.to_string()))?;
            rt.block_on(arcmem_cli::server::serve(svc))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("ARCMEM_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
