use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use qimrag_core::dataset::{
    self, chunk_text, generate_qa_batch, merge_feedback, split_dataset, DatasetBundle, QAPair,
    DEFAULT_MAX_CHARS, DEFAULT_OVERLAP_CHARS, DEFAULT_PAIRS_PER_CHUNK, DEFAULT_SPLIT_RATIO, DEFAULT_SPLIT_SEED,
};
use qimrag_core::feedback::{FeedbackError, FeedbackLog, FeedbackRecord, NewFeedback, LOG_FILE_NAME};
use qimrag_core::pipeline::{self, AnswerOptions, PipelineAnswer, PipelineError};
use qimrag_core::providers::{ProviderError, ProviderMode, Providers};
use qimrag_core::rng::fnv1a64;
use qimrag_core::store::{ChunkRecord, Collection, StoreError, VectorStore};

pub const COLLECTION_NAME: &str = "corpus";
pub const GENERATED_FILE_NAME: &str = "generated.jsonl";
pub const VECTORS_DIR_NAME: &str = "vectors";
/// Feedback below this rating is left out of the export unless asked for.
pub const DEFAULT_EXPORT_MIN_RATING: u8 = 4;
const QA_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("{0}")]
    Internal(String),
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::DimensionMismatch { .. } => Self::Conflict(e.to_string()),
            StoreError::EmptyCollection => Self::NotFound(e.to_string()),
            StoreError::DegenerateEmbedding(_) | StoreError::InvalidK => Self::BadRequest(e.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<PipelineError> for ServiceError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidOptions(_) | PipelineError::EmptyQuestion | PipelineError::DegenerateQuery => {
                Self::BadRequest(e.to_string())
            }
            PipelineError::EmptyCollection => Self::NotFound(e.to_string()),
            PipelineError::Embedding(_) => Self::Provider(e.to_string()),
            PipelineError::Store(s) => s.into(),
            PipelineError::Similarity(_) => Self::Internal(e.to_string()),
        }
    }
}

impl From<FeedbackError> for ServiceError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::InvalidRating(_) | FeedbackError::EmptyField => Self::BadRequest(e.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<ProviderError> for ServiceError {
    fn from(e: ProviderError) -> Self {
        Self::Provider(e.to_string())
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub doc_id: String,
    pub chunks_created: usize,
    pub pairs_generated: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub collection_size: usize,
    pub dimension: usize,
    pub providers: BTreeMap<String, ProviderMode>,
}

/// A generated pair tagged with the document version it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneratedEntry {
    doc_id: String,
    content_hash: String,
    pair: QAPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportSplit {
    #[default]
    Train,
    Test,
    All,
}

/// Everything one service instance owns: a single collection, the providers,
/// the feedback log and the generated Q&A pairs, all rooted in a cache
/// directory.
pub struct AppState {
    cache_dir: PathBuf,
    store: VectorStore,
    collection: Arc<Collection>,
    providers: Providers,
    feedback: Mutex<FeedbackLog>,
    generated: Mutex<Generated>,
    /// Serializes ingests so replace-by-document stays consistent.
    ingest_lock: Mutex<()>,
}

struct Generated {
    file: File,
    entries: Vec<GeneratedEntry>,
}

fn content_hash(text: &str) -> String {
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

fn chunk_id(doc_id: &str, hash: &str, ordinal: usize) -> String {
    format!("{doc_id}#{hash}#{ordinal}")
}

fn version_prefix(doc_id: &str, hash: &str) -> String {
    format!("{doc_id}#{hash}#")
}

impl AppState {
    pub fn open(cache_dir: impl Into<PathBuf>, providers: Providers) -> Result<Self, ServiceError> {
        let cache_dir = cache_dir.into();
        std::fs::create_dir_all(&cache_dir)?;
        let store = VectorStore::open(cache_dir.join(VECTORS_DIR_NAME))?;
        let collection = match store.get(COLLECTION_NAME) {
            Some(c) => c,
            None => store.create_collection(COLLECTION_NAME, providers.embedder.dimension())?,
        };
        if collection.dimension() != providers.embedder.dimension() {
            tracing::warn!(
                cached = collection.dimension(),
                embedder = providers.embedder.dimension(),
                "cached collection dimension differs from the embedder; ingest will be rejected"
            );
        }
        let feedback = FeedbackLog::open(cache_dir.join(LOG_FILE_NAME))?;
        let generated = Generated::open(&cache_dir.join(GENERATED_FILE_NAME))?;
        Ok(Self {
            cache_dir,
            store,
            collection,
            providers,
            feedback: Mutex::new(feedback),
            generated: Mutex::new(generated),
            ingest_lock: Mutex::new(()),
        })
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache_dir
    }

    pub fn collection(&self) -> &Collection {
        &self.collection
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    /// Ingests every `*.txt` file in `dir`, using the file stem as doc id.
    pub fn ingest_dir(&self, dir: &Path) -> Result<Vec<IngestResponse>, ServiceError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for path in paths {
            let Some(doc_id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path)?;
            out.push(self.ingest(IngestRequest {
                doc_id: doc_id.to_string(),
                text,
            })?);
        }
        Ok(out)
    }

    /// Chunks, embeds and upserts a document. Re-ingesting identical text is
    /// a no-op; new text for a known doc id replaces its chunks.
    pub fn ingest(&self, req: IngestRequest) -> Result<IngestResponse, ServiceError> {
        let doc_id = req.doc_id.trim();
        if doc_id.is_empty() || doc_id.contains('#') {
            return Err(ServiceError::BadRequest("doc_id must be non-empty and must not contain '#'".into()));
        }
        if req.text.trim().is_empty() {
            return Err(ServiceError::BadRequest("text must not be empty".into()));
        }
        let _guard = self.ingest_lock.lock().expect("ingest lock poisoned");

        let hash = content_hash(&req.text);
        let prefix = version_prefix(doc_id, &hash);
        let existing = self.collection.doc_chunks(doc_id);
        if !existing.is_empty() && existing.iter().all(|c| c.chunk_id.starts_with(&prefix)) {
            return Ok(IngestResponse {
                doc_id: doc_id.to_string(),
                chunks_created: 0,
                pairs_generated: 0,
            });
        }

        let chunks = chunk_text(doc_id, &req.text, DEFAULT_MAX_CHARS, DEFAULT_OVERLAP_CHARS)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let dimension = self.collection.dimension();
        let mut records = Vec::with_capacity(chunks.len());
        for c in &chunks {
            let embedding = self.providers.embedder.embed(&c.text)?;
            if embedding.dimension() != dimension {
                return Err(ServiceError::Conflict(format!(
                    "embedder produced dimension {}, collection has {dimension}",
                    embedding.dimension()
                )));
            }
            if embedding.is_degenerate() {
                // punctuation-only chunk; nothing to retrieve by
                continue;
            }
            records.push(ChunkRecord {
                chunk_id: chunk_id(doc_id, &hash, c.ordinal),
                doc_id: doc_id.to_string(),
                ordinal: c.ordinal as u64,
                text: c.text.clone(),
                embedding,
            });
        }
        if records.is_empty() {
            return Err(ServiceError::BadRequest("text has no embeddable content".into()));
        }

        self.collection.remove_doc(doc_id);
        let created = self.collection.upsert(records)?;
        self.store.flush(COLLECTION_NAME)?;

        let pairs = self.generate_pairs(doc_id, &hash, &chunks)?;
        Ok(IngestResponse {
            doc_id: doc_id.to_string(),
            chunks_created: created,
            pairs_generated: pairs,
        })
    }

    fn generate_pairs(&self, doc_id: &str, hash: &str, chunks: &[dataset::TextChunk]) -> Result<usize, ServiceError> {
        let results = generate_qa_batch(
            chunks,
            self.providers.qa_generator.as_ref(),
            DEFAULT_PAIRS_PER_CHUNK,
            QA_PARALLELISM,
        );
        let mut entries = Vec::new();
        for (chunk, result) in chunks.iter().zip(results) {
            match result {
                Ok(g) => entries.extend(g.pairs.into_iter().map(|pair| GeneratedEntry {
                    doc_id: doc_id.to_string(),
                    content_hash: hash.to_string(),
                    pair,
                })),
                Err(e) => tracing::warn!(doc_id, ordinal = chunk.ordinal, error = %e, "q&a generation failed"),
            }
        }
        let n = entries.len();
        self.generated.lock().expect("generated lock poisoned").append(entries)?;
        Ok(n)
    }

    pub fn query(&self, question: &str, options: &AnswerOptions) -> Result<PipelineAnswer, ServiceError> {
        Ok(pipeline::answer(question, &self.collection, &self.providers, options)?)
    }

    pub fn record_feedback(&self, new: NewFeedback) -> Result<FeedbackRecord, ServiceError> {
        new.validate()?;
        Ok(self.feedback.lock().expect("feedback lock poisoned").append(new)?)
    }

    /// Generated pairs of the currently ingested document versions.
    pub fn generated_pairs(&self) -> Vec<QAPair> {
        let live: HashSet<(String, String)> = self
            .collection
            .records()
            .into_iter()
            .filter_map(|r| {
                let mut parts = r.chunk_id.splitn(3, '#');
                Some((parts.next()?.to_string(), parts.next()?.to_string()))
            })
            .collect();
        self.generated
            .lock()
            .expect("generated lock poisoned")
            .entries
            .iter()
            .filter(|e| live.contains(&(e.doc_id.clone(), e.content_hash.clone())))
            .map(|e| e.pair.clone())
            .collect()
    }

    /// Splits the generated pairs and folds in feedback rated at least
    /// `min_rating`. With fewer than two distinct pairs everything is train.
    pub fn training_bundle(&self, min_rating: u8) -> DatasetBundle {
        let pairs = self.generated_pairs();
        let bundle = match split_dataset(pairs.clone(), DEFAULT_SPLIT_RATIO, DEFAULT_SPLIT_SEED) {
            Ok(b) => b,
            Err(_) => {
                let mut b = DatasetBundle::empty(DEFAULT_SPLIT_SEED, DEFAULT_SPLIT_RATIO);
                b.train = pairs;
                b
            }
        };
        let feedback = self.feedback.lock().expect("feedback lock poisoned").records().to_vec();
        merge_feedback(bundle, &feedback, min_rating)
    }

    pub fn export_training(&self, min_rating: u8, split: ExportSplit) -> String {
        let b = self.training_bundle(min_rating);
        let pairs: Vec<QAPair> = match split {
            ExportSplit::Train => b.train,
            ExportSplit::Test => b.test,
            ExportSplit::All => b.train.into_iter().chain(b.test).collect(),
        };
        dataset::to_guanaco_text(&pairs)
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            collection_size: self.collection.count(),
            dimension: self.collection.dimension(),
            providers: self
                .providers
                .modes()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

impl Generated {
    fn open(path: &Path) -> Result<Self, ServiceError> {
        let mut entries = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(e) => entries.push(e),
                    Err(e) => tracing::warn!(error = %e, "skipping unreadable generated pair"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file, entries })
    }

    fn append(&mut self, new: Vec<GeneratedEntry>) -> Result<(), ServiceError> {
        if new.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in &new {
            buf.push_str(&serde_json::to_string(e).map_err(|e| ServiceError::Internal(e.to_string()))?);
            buf.push('\n');
        }
        self.file.write_all(buf.as_bytes())?;
        self.file.sync_data()?;
        self.entries.extend(new);
        Ok(())
    }
}
