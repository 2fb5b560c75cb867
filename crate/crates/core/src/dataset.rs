//! Training-data preparation: chunking, Q&A generation through a generator
//! provider, train/test splitting, Guanaco-style export, and folding user
//! feedback back into the training split.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::FeedbackRecord;
use crate::providers::{Generator, ProviderError};
use crate::rng::SplitMix64;

pub const HUMAN_MARKER: &str = "### Human:";
pub const ASSISTANT_MARKER: &str = "### Assistant:";

pub const DEFAULT_MAX_CHARS: usize = 800;
pub const DEFAULT_OVERLAP_CHARS: usize = 80;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.9;
pub const DEFAULT_SPLIT_SEED: u64 = 42;
pub const DEFAULT_PAIRS_PER_CHUNK: usize = 5;
/// How far back from a hard cut the chunker looks for whitespace.
pub const WHITESPACE_LOOKBACK: usize = 32;

pub const QA_PROMPT_VERSION: &str = "qa-prompt-v1";
/// Separates the instructions of the Q&A prompt from the source content.
pub const QA_CONTENT_MARKER: &str = "\n\nContent:\n";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid chunking parameters: max_chars {max_chars}, overlap {overlap}")]
    InvalidChunking { max_chars: usize, overlap: usize },
    #[error("invalid pair: {0}")]
    InvalidPair(&'static str),
    #[error("split ratio must be in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("need at least 2 distinct pairs to split, got {0}")]
    TooFewPairs(usize),
    #[error("malformed line {line}: {text:?}")]
    Malformed { line: usize, text: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub doc_id: String,
    pub ordinal: usize,
    /// Offset of the first character, in chars.
    pub start: usize,
    pub text: String,
}

/// Splits `text` into chunks of at most `max_chars` characters where each
/// chunk starts `overlap_chars` characters before the previous one ended.
///
/// A cut is moved back to just after the nearest whitespace within
/// [`WHITESPACE_LOOKBACK`] characters; without whitespace it lands exactly on
/// `max_chars`.
pub fn chunk_text(
    doc_id: &str,
    text: &str,
    max_chars: usize,
    overlap_chars: usize,
) -> Result<Vec<TextChunk>, DatasetError> {
    if max_chars == 0 || overlap_chars >= max_chars {
        return Err(DatasetError::InvalidChunking {
            max_chars,
            overlap: overlap_chars,
        });
    }
    let chars: Vec<char> = text.chars().collect();
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = if chars.len() - start <= max_chars {
            chars.len()
        } else {
            let hard = start + max_chars;
            let floor = hard.saturating_sub(WHITESPACE_LOOKBACK).max(start + overlap_chars + 1);
            (floor..=hard)
                .rev()
                .find(|&j| chars[j - 1].is_whitespace())
                .unwrap_or(hard)
        };
        chunks.push(TextChunk {
            doc_id: doc_id.to_string(),
            ordinal: chunks.len(),
            start,
            text: chars[start..end].iter().collect(),
        });
        if end == chars.len() {
            break;
        }
        start = end - overlap_chars;
    }
    Ok(chunks)
}

/// Inverse of [`chunk_text`]: concatenates chunks dropping each overlap.
pub fn reassemble(chunks: &[TextChunk], overlap_chars: usize) -> String {
    let mut out = String::new();
    for (i, c) in chunks.iter().enumerate() {
        let skip = if i == 0 { 0 } else { overlap_chars };
        out.extend(c.text.chars().skip(skip));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    Generated,
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub answer: String,
    pub source_doc_id: String,
    pub origin: PairOrigin,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl QAPair {
    /// Collapses all whitespace runs (including newlines) to single spaces and
    /// rejects empty fields or fields containing a Human/Assistant marker.
    pub fn new(
        question: &str,
        answer: &str,
        source_doc_id: impl Into<String>,
        origin: PairOrigin,
    ) -> Result<Self, DatasetError> {
        let question = normalize(question);
        let answer = normalize(answer);
        if question.is_empty() || answer.is_empty() {
            return Err(DatasetError::InvalidPair("empty question or answer"));
        }
        for field in [&question, &answer] {
            if field.contains(HUMAN_MARKER) || field.contains(ASSISTANT_MARKER) {
                return Err(DatasetError::InvalidPair("contains a dialogue marker"));
            }
        }
        Ok(Self {
            question,
            answer,
            source_doc_id: source_doc_id.into(),
            origin,
        })
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.question, &self.answer)
    }

    pub fn to_guanaco_line(&self) -> String {
        format!("{HUMAN_MARKER} {} {ASSISTANT_MARKER} {}", self.question, self.answer)
    }
}

/// Splits one `### Human: q ### Assistant: a` line into `(q, a)`.
pub fn parse_guanaco_line(line: &str) -> Option<(String, String)> {
    let rest = line.trim().strip_prefix(HUMAN_MARKER)?.strip_prefix(' ')?;
    let (q, a) = rest.split_once(&format!(" {ASSISTANT_MARKER} "))?;
    if q.trim().is_empty() || a.trim().is_empty() {
        return None;
    }
    Some((q.to_string(), a.to_string()))
}

pub fn parse_guanaco(text: &str) -> Result<Vec<(String, String)>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_guanaco_line(l).ok_or_else(|| DatasetError::Malformed {
                line: i + 1,
                text: l.to_string(),
            })
        })
        .collect()
}

pub fn qa_prompt(chunk_text: &str, pairs: usize) -> String {
    format!(
        "You are a helpful assistant that writes training data.\n\
         Read the content below and write up to {pairs} question and answer pairs \
         that can be answered from the content alone.\n\
         Write each pair on a single line in exactly this form:\n\
         {HUMAN_MARKER} <question> {ASSISTANT_MARKER} <answer>\n\
         Do not number the lines and do not add any other text.{QA_CONTENT_MARKER}{chunk_text}"
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaGeneration {
    pub pairs: Vec<QAPair>,
    /// Non-blank output lines that could not be turned into a pair.
    pub discarded: usize,
}

impl QaGeneration {
    /// The generator answered but nothing usable came back.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn generate_qa(
    doc_id: &str,
    chunk_text: &str,
    generator: &dyn Generator,
    pairs_per_chunk: usize,
) -> Result<QaGeneration, DatasetError> {
    let output = generator.generate(&qa_prompt(chunk_text, pairs_per_chunk))?;
    let mut pairs = Vec::new();
    let mut discarded = 0;
    for line in output.lines().filter(|l| !l.trim().is_empty()) {
        let parsed = parse_guanaco_line(line)
            .and_then(|(q, a)| QAPair::new(&q, &a, doc_id, PairOrigin::Generated).ok());
        match parsed {
            Some(p) if pairs.len() < pairs_per_chunk => pairs.push(p),
            Some(_) => {}
            None => discarded += 1,
        }
    }
    Ok(QaGeneration { pairs, discarded })
}

/// Runs [`generate_qa`] over many chunks with at most `max_parallel`
/// concurrent generator calls. Results keep chunk order.
pub fn generate_qa_batch(
    chunks: &[TextChunk],
    generator: &dyn Generator,
    pairs_per_chunk: usize,
    max_parallel: usize,
) -> Vec<Result<QaGeneration, DatasetError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_parallel.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        chunks
            .par_iter()
            .map(|c| generate_qa(&c.doc_id, &c.text, generator, pairs_per_chunk))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub train: Vec<QAPair>,
    pub test: Vec<QAPair>,
    pub split_seed: u64,
    pub split_ratio: f64,
}

impl DatasetBundle {
    pub fn empty(split_seed: u64, split_ratio: f64) -> Self {
        Self {
            train: Vec::new(),
            test: Vec::new(),
            split_seed,
            split_ratio,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn dedup(pairs: Vec<QAPair>) -> Vec<QAPair> {
    let mut seen = HashSet::new();
    pairs
        .into_iter()
        .filter(|p| seen.insert((p.question.clone(), p.answer.clone())))
        .collect()
}

/// Deduplicates by `(question, answer)`, shuffles with a SplitMix64 stream
/// seeded by `seed`, and puts the first `⌈ratio·N⌉` pairs in train.
pub fn split_dataset(pairs: Vec<QAPair>, ratio: f64, seed: u64) -> Result<DatasetBundle, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let mut pairs = dedup(pairs);
    if pairs.len() < 2 {
        return Err(DatasetError::TooFewPairs(pairs.len()));
    }
    pairs.shuffle(&mut SplitMix64::new(seed));
    // guard against ratio·N landing a hair above an integer
    let n_train = ((ratio * pairs.len() as f64) - 1e-9).ceil() as usize;
    let test = pairs.split_off(n_train.min(pairs.len()));
    Ok(DatasetBundle {
        train: pairs,
        test,
        split_seed: seed,
        split_ratio: ratio,
    })
}

fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(base.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train_path(base: &Path) -> PathBuf {
    sibling(base, ".train.txt")
}

pub fn test_path(base: &Path) -> PathBuf {
    sibling(base, ".test.txt")
}

pub fn to_guanaco_text(pairs: &[QAPair]) -> String {
    pairs
        .iter()
        .map(|p| p.to_guanaco_line() + "\n")
        .collect()
}

/// Writes `<base>.train.txt` and `<base>.test.txt`, one pair per line.
pub fn export_guanaco(bundle: &DatasetBundle, base: &Path) -> Result<(PathBuf, PathBuf), DatasetError> {
    let (train, test) = (train_path(base), test_path(base));
    fs::write(&train, to_guanaco_text(&bundle.train))?;
    fs::write(&test, to_guanaco_text(&bundle.test))?;
    Ok((train, test))
}

/// Appends feedback rated at least `min_rating` to the training split as
/// feedback-origin pairs, skipping any `(question, answer)` already present.
pub fn merge_feedback(bundle: DatasetBundle, feedback: &[FeedbackRecord], min_rating: u8) -> DatasetBundle {
    let mut seen: HashSet<(String, String)> = bundle
        .train
        .iter()
        .chain(&bundle.test)
        .map(|p| (p.question.clone(), p.answer.clone()))
        .collect();
    let mut out = bundle;
    for fb in feedback.iter().filter(|f| f.rating >= min_rating) {
        let Ok(pair) = QAPair::new(&fb.question, &fb.final_answer, "feedback", PairOrigin::Feedback) else {
            continue;
        };
        if seen.insert((pair.question.clone(), pair.answer.clone())) {
            out.train.push(pair);
        }
    }
    out
}
