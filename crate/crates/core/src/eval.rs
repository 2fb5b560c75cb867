//! Answer-quality evaluation: cosine similarity between produced answers and
//! reference texts, summarized by mean and sample standard deviation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{Embedder, ProviderError};
use crate::similarity::{cosine_similarity, SimilarityError};

pub const REPORT_DECIMALS: u32 = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("text for {0} embeds to a zero vector")]
    Degenerate(&'static str),
    #[error("at least 2 rows are required, got {0}")]
    TooFewRows(usize),
    #[error("no reference for answer {0}")]
    MissingReference(String),
    #[error(transparent)]
    Embedding(#[from] ProviderError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    pub ave: f64,
    /// Sample standard deviation (divisor N-1).
    pub sd: f64,
}

impl EvalSummary {
    pub fn rounded(&self) -> (f64, f64) {
        (
            round_half_up(self.ave, REPORT_DECIMALS),
            round_half_up(self.sd, REPORT_DECIMALS),
        )
    }
}

pub fn score_pair(answer: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64, EvalError> {
    let a = embedder.embed(answer)?;
    if a.is_degenerate() {
        return Err(EvalError::Degenerate("answer"));
    }
    let r = embedder.embed(reference)?;
    if r.is_degenerate() {
        return Err(EvalError::Degenerate("reference"));
    }
    Ok(cosine_similarity(&a, &r)?)
}

pub fn aggregate(rows: Vec<EvalRow>) -> Result<EvalSummary, EvalError> {
    if rows.len() < 2 {
        return Err(EvalError::TooFewRows(rows.len()));
    }
    let n = rows.len() as f64;
    let ave = rows.iter().map(|r| r.score).sum::<f64>() / n;
    let ss: f64 = rows.iter().map(|r| (r.score - ave).powi(2)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    Ok(EvalSummary { rows, ave, sd })
}

pub fn aggregate_scores(scores: &[f64]) -> Result<EvalSummary, EvalError> {
    aggregate(
        scores
            .iter()
            .enumerate()
            .map(|(i, &score)| EvalRow {
                doc_id: (i + 1).to_string(),
                score,
            })
            .collect(),
    )
}

/// Rounds halves towards +infinity. A relative nudge absorbs binary
/// representation error so that e.g. 0.9345 rounds to 0.935.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let nudge = scaled.abs().max(1.0) * 1e-12;
    (scaled + 0.5 + nudge).floor() / scale
}

/// Scores every `*.txt` answer in `answers_dir` against the same-named file
/// in `refs_dir`; the file stem is the doc id. Rows come back sorted by doc id.
pub fn score_directories(
    answers_dir: &Path,
    refs_dir: &Path,
    embedder: &dyn Embedder,
) -> Result<Vec<EvalRow>, EvalError> {
    let mut answers = BTreeMap::new();
    for entry in std::fs::read_dir(answers_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            answers.insert(stem.to_string(), path.clone());
        }
    }
    let mut rows = Vec::with_capacity(answers.len());
    for (doc_id, path) in answers {
        let reference = refs_dir.join(format!("{doc_id}.txt"));
        if !reference.is_file() {
            return Err(EvalError::MissingReference(doc_id));
        }
        let score = score_pair(
            &std::fs::read_to_string(&path)?,
            &std::fs::read_to_string(&reference)?,
            embedder,
        )?;
        rows.push(EvalRow { doc_id, score });
    }
    Ok(rows)
}

/// CSV `doc_id,score` followed by `# ave,<x>` and `# sd,<x>` footer lines
/// rounded for reporting.
pub fn write_report<W: Write>(summary: &EvalSummary, mut out: W) -> std::io::Result<()> {
    writeln!(out, "doc_id,score")?;
    for row in &summary.rows {
        writeln!(out, "{},{}", row.doc_id, row.score)?;
    }
    let (ave, sd) = summary.rounded();
    writeln!(out, "# ave,{ave:.3}")?;
    writeln!(out, "# sd,{sd:.3}")?;
    Ok(())
}
