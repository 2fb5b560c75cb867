//! Embedding and text-generation providers.
//!
//! A provider is either a builtin stub (offline, deterministic) or a remote
//! HTTP endpoint. Remote providers receive `POST {base_url}` with the JSON
//! body `{"model": ..., "input": ...}` and an optional bearer token read from
//! the environment variable named by `token_env`. Generators answer with
//! `{"output": "..."}` (or `{"text": "..."}`); embedders with
//! `{"embedding": [...]}` (or OpenAI-style `{"data": [{"embedding": [...]}]}`).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::embed::det_embed;
use crate::similarity::Embedding;

pub const DEFAULT_EMBED_DIMENSION: usize = 256;
pub const DEFAULT_TIMEOUT_SECS: u64 = 30;
pub const ENV_PREFIX: &str = "RAG";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider request timed out")]
    Timeout,
    #[error("provider request failed: {0}")]
    Request(String),
    #[error("malformed provider response: {0}")]
    Response(String),
    #[error("stub provider failure: {0}")]
    Stub(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("provider {role}: {msg}")]
    Invalid { role: &'static str, msg: String },
    #[error("unknown stub {name:?} for {role}")]
    UnknownStub { role: &'static str, name: String },
    #[error("cannot read provider config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse provider config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Stub,
    Remote,
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, ProviderError>;
    fn dimension(&self) -> usize;
    fn mode(&self) -> ProviderMode;
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError>;
    fn mode(&self) -> ProviderMode;
}

/// Stub embedder backed by [`det_embed`].
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dimension: usize,
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        Ok(det_embed(text, self.dimension))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::Stub
    }
}

/// Builtin generator stubs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubGenerator {
    /// Returns the prompt unchanged.
    Echo,
    /// Always fails.
    Fail,
    /// Emits one `### Human: ... ### Assistant: ...` line per sentence of the
    /// content section of a Q&A-generation prompt.
    Extractive,
}

impl StubGenerator {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "echo" => Some(Self::Echo),
            "fail" => Some(Self::Fail),
            "extractive" => Some(Self::Extractive),
            _ => None,
        }
    }
}

impl Generator for StubGenerator {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError> {
        match self {
            Self::Echo => Ok(prompt.to_string()),
            Self::Fail => Err(ProviderError::Stub("configured to fail".into())),
            Self::Extractive => Ok(extractive_pairs(prompt)),
        }
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::Stub
    }
}

fn extractive_pairs(prompt: &str) -> String {
    let content = prompt
        .split_once(crate::dataset::QA_CONTENT_MARKER)
        .map(|(_, c)| c)
        .unwrap_or(prompt);
    let flat = content.split_whitespace().collect::<Vec<_>>().join(" ");
    flat.split_inclusive(['.', '?', '!'])
        .map(str::trim)
        .filter(|s| s.split_whitespace().count() >= 4 && !s.contains("###"))
        .map(|s| {
            let topic: Vec<&str> = s.split_whitespace().take(4).collect();
            format!(
                "### Human: What does the text say about \"{}\"? ### Assistant: {}",
                topic.join(" ").trim_end_matches(['.', ',', ';', ':', '?', '!']),
                s
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub token_env: Option<String>,
    pub timeout: Duration,
}

struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteClient {
    fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self { cfg, agent }
    }

    fn post(&self, input: &str) -> Result<Value, ProviderError> {
        let mut req = self.agent.post(&self.cfg.base_url);
        if let Some(token) = self
            .cfg
            .token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
        {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let resp = req
            .send_json(json!({ "model": self.cfg.model, "input": input }))
            .map_err(map_ureq)?;
        resp.into_body()
            .read_json::<Value>()
            .map_err(|e| ProviderError::Response(e.to_string()))
    }
}

fn map_ureq(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Request(other.to_string()),
    }
}

pub struct RemoteGenerator(RemoteClient);

impl RemoteGenerator {
    pub fn new(cfg: RemoteConfig) -> Self {
        Self(RemoteClient::new(cfg))
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError> {
        let v = self.0.post(prompt)?;
        ["output", "text"]
            .iter()
            .find_map(|k| v.get(*k).and_then(Value::as_str))
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Response("missing \"output\" field".into()))
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::Remote
    }
}

pub struct RemoteEmbedder {
    client: RemoteClient,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteConfig, dimension: usize) -> Self {
        Self {
            client: RemoteClient::new(cfg),
            dimension,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        let v = self.client.post(text)?;
        let arr = v
            .get("embedding")
            .or_else(|| v.pointer("/data/0/embedding"))
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Response("missing \"embedding\" field".into()))?;
        let values = arr
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ProviderError::Response("non-numeric embedding".into())))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != self.dimension {
            return Err(ProviderError::Response(format!(
                "expected {} dimensions, got {}",
                self.dimension,
                values.len()
            )));
        }
        Embedding::new(values).map_err(|e| ProviderError::Response(e.to_string()))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::Remote
    }
}

/// One provider entry of the config file. Exactly one of `stub` and
/// `base_url` must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub stub: Option<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub token_env: Option<String>,
    pub timeout_secs: Option<u64>,
    /// Embedders only.
    pub dimension: Option<usize>,
}

impl ProviderSpec {
    pub fn stub(name: &str) -> Self {
        Self {
            stub: Some(name.into()),
            ..Self::default()
        }
    }

    fn source(&self, role: &'static str) -> Result<Source<'_>, ConfigError> {
        match (&self.stub, &self.base_url) {
            (Some(s), None) => Ok(Source::Stub(s)),
            (None, Some(url)) => Ok(Source::Remote(RemoteConfig {
                base_url: url.clone(),
                model: self.model.clone().unwrap_or_default(),
                token_env: self.token_env.clone(),
                timeout: Duration::from_secs(self.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS)),
            })),
            _ => Err(ConfigError::Invalid {
                role,
                msg: "exactly one of `stub` and `base_url` must be set".into(),
            }),
        }
    }

    fn apply_env(&mut self, role: &str, env: &dyn Fn(&str) -> Option<String>) {
        let key = |field: &str| format!("{ENV_PREFIX}_{}_{field}", role.to_uppercase());
        if let Some(v) = env(&key("STUB")) {
            self.stub = Some(v);
            self.base_url = None;
        }
        if let Some(v) = env(&key("BASE_URL")) {
            self.base_url = Some(v);
            self.stub = None;
        }
        if let Some(v) = env(&key("MODEL")) {
            self.model = Some(v);
        }
        if let Some(v) = env(&key("TOKEN_ENV")) {
            self.token_env = Some(v);
        }
        if let Some(v) = env(&key("TIMEOUT")).and_then(|v| v.parse().ok()) {
            self.timeout_secs = Some(v);
        }
        if let Some(v) = env(&key("DIMENSION")).and_then(|v| v.parse().ok()) {
            self.dimension = Some(v);
        }
    }
}

enum Source<'a> {
    Stub(&'a str),
    Remote(RemoteConfig),
}

/// Provider configuration for all four pipeline roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub embedder: ProviderSpec,
    pub fine_tuned: ProviderSpec,
    pub foundational: ProviderSpec,
    pub qa_generator: ProviderSpec,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            embedder: ProviderSpec {
                dimension: Some(DEFAULT_EMBED_DIMENSION),
                ..ProviderSpec::stub("hash")
            },
            fine_tuned: ProviderSpec::stub("echo"),
            foundational: ProviderSpec::stub("echo"),
            qa_generator: ProviderSpec::stub("extractive"),
        }
    }
}

impl ProvidersConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Overrides fields from `RAG_<ROLE>_<FIELD>` variables, e.g.
    /// `RAG_FOUNDATIONAL_BASE_URL` or `RAG_EMBEDDER_DIMENSION`.
    pub fn apply_env(&mut self, env: &dyn Fn(&str) -> Option<String>) {
        self.embedder.apply_env("embedder", env);
        self.fine_tuned.apply_env("fine_tuned", env);
        self.foundational.apply_env("foundational", env);
        self.qa_generator.apply_env("qa_generator", env);
    }

    pub fn apply_process_env(&mut self) {
        self.apply_env(&|k| std::env::var(k).ok());
    }

    pub fn build(&self) -> Result<Providers, ConfigError> {
        Ok(Providers {
            embedder: build_embedder(&self.embedder)?,
            fine_tuned: build_generator("fine_tuned", &self.fine_tuned)?,
            foundational: build_generator("foundational", &self.foundational)?,
            qa_generator: build_generator("qa_generator", &self.qa_generator)?,
        })
    }
}

fn build_embedder(spec: &ProviderSpec) -> Result<Arc<dyn Embedder>, ConfigError> {
    let dimension = spec.dimension.unwrap_or(DEFAULT_EMBED_DIMENSION);
    if dimension == 0 {
        return Err(ConfigError::Invalid {
            role: "embedder",
            msg: "dimension must be >= 1".into(),
        });
    }
    match spec.source("embedder")? {
        Source::Stub("hash") => Ok(Arc::new(HashEmbedder { dimension })),
        Source::Stub(other) => Err(ConfigError::UnknownStub {
            role: "embedder",
            name: other.into(),
        }),
        Source::Remote(cfg) => Ok(Arc::new(RemoteEmbedder::new(cfg, dimension))),
    }
}

fn build_generator(role: &'static str, spec: &ProviderSpec) -> Result<Arc<dyn Generator>, ConfigError> {
    match spec.source(role)? {
        Source::Stub(name) => StubGenerator::from_name(name)
            .map(|g| Arc::new(g) as Arc<dyn Generator>)
            .ok_or_else(|| ConfigError::UnknownStub {
                role,
                name: name.into(),
            }),
        Source::Remote(cfg) => Ok(Arc::new(RemoteGenerator::new(cfg))),
    }
}

/// The four providers a pipeline needs.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub fine_tuned: Arc<dyn Generator>,
    pub foundational: Arc<dyn Generator>,
    pub qa_generator: Arc<dyn Generator>,
}

impl Providers {
    /// All-stub providers with the default hash embedder dimension.
    pub fn stubs() -> Self {
        ProvidersConfig::default()
            .build()
            .expect("default config is valid")
    }

    pub fn modes(&self) -> BTreeMap<&'static str, ProviderMode> {
        BTreeMap::from([
            ("embedder", self.embedder.mode()),
            ("fine_tuned", self.fine_tuned.mode()),
            ("foundational", self.foundational.mode()),
            ("qa_generator", self.qa_generator.mode()),
        ])
    }
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.modes()).finish()
    }
}
