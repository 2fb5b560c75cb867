use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use qimrag_tools::{init_logging, load_providers_config};
use qimrag_service::{serve, AppState};

/// Serves ingest, query, feedback and training export over HTTP.
///
/// Provider settings come from `--providers` (TOML) and are overridden by
/// `RAG_<ROLE>_<FIELD>` environment variables; without either, all providers
/// are offline stubs.
#[derive(Parser)]
#[command(name = "ragservice")]
struct Cli {
    /// Directory of `<doc_id>.txt` files ingested at startup.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Holds the vector collection, feedback log and generated pairs.
    #[arg(long, default_value = "cache")]
    cache: PathBuf,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long)]
    providers: Option<PathBuf>,
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ragservice: {e}");
            ExitCode::FAILURE
        }
    }
}

async fn open_state(cli: &Cli) -> Result<Arc<AppState>, Box<dyn std::error::Error>> {
    let providers = load_providers_config(cli.providers.as_deref())?.build()?;
    let state = Arc::new(AppState::open(&cli.cache, providers)?);
    if let Some(dir) = &cli.corpus {
        let ingested = tokio::task::spawn_blocking({
            let state = Arc::clone(&state);
            let dir = dir.clone();
            move || state.ingest_dir(&dir)
        })
        .await??;
        let chunks: usize = ingested.iter().map(|r| r.chunks_created).sum();
        eprintln!("ingested {} documents ({chunks} new chunks)", ingested.len());
    }
    Ok(state)
}

async fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let state = open_state(&cli).await?;
    let listener = tokio::net::TcpListener::bind(SocketAddr::new(cli.host, cli.port)).await?;
    println!("listening on http://{}", listener.local_addr()?);
    std::io::stdout().flush()?;
    serve(listener, state).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use qimrag_core::fixtures;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("ragservice").chain(args.iter().copied())).unwrap()
    }

    #[tokio::test]
    async fn rejects_invalid_provider_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("providers.toml");
        std::fs::write(&cfg, "[foundational]\nstub = \"echo\"\nbase_url = \"http://example.invalid\"\n").unwrap();
        let cache = dir.path().join("cache");
        let err = open_state(&parse(&["--cache", cache.to_str().unwrap(), "--providers", cfg.to_str().unwrap()]))
            .await
            .err()
            .unwrap();
        assert!(err.to_string().contains("exactly one of"), "{err}");
    }

    #[tokio::test]
    async fn ingests_corpus_at_startup() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        fixtures::write_corpus(&corpus).unwrap();
        let cli = parse(&[
            "--corpus",
            corpus.to_str().unwrap(),
            "--cache",
            dir.path().join("cache").to_str().unwrap(),
        ]);
        assert_eq!(cli.port, 8080);
        let state = open_state(&cli).await.unwrap();
        for doc in fixtures::corpus() {
            assert!(!state.collection().doc_chunks(doc.doc_id).is_empty());
        }
    }
}
