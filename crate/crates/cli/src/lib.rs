//! Shared helpers for the command-line binaries.

use std::path::Path;

use qimrag_core::providers::{ConfigError, ProvidersConfig};

/// Reads a provider config file (or the all-stub default) and applies
/// `RAG_*` environment overrides.
pub fn load_providers_config(path: Option<&Path>) -> Result<ProvidersConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => ProvidersConfig::from_file(p)?,
        None => ProvidersConfig::default(),
    };
    cfg.apply_process_env();
    Ok(cfg)
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("invalid list entry {v:?}")))
        .collect()
}

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}
