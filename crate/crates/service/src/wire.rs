//! JSON bodies exchanged with clients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use qimrag_core::pipeline::{AnswerOptions, Outcome, PipelineAnswer};
use qimrag_core::store::RankedResult;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default)]
    pub options: AnswerOptions,
}

/// A reference as sent to clients: the chunk without its embedding, plus
/// both scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireReference {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: u64,
    pub text: String,
    pub cosine: f64,
    pub distance: f64,
    pub qim_score: Option<f64>,
}

impl From<RankedResult> for WireReference {
    fn from(r: RankedResult) -> Self {
        Self {
            chunk_id: r.chunk.chunk_id,
            doc_id: r.chunk.doc_id,
            ordinal: r.chunk.ordinal,
            text: r.chunk.text,
            cosine: r.cosine,
            distance: r.distance,
            qim_score: r.qim_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub question: String,
    pub outcome: Outcome,
    pub final_answer: String,
    pub answer1: String,
    pub answer2: String,
    pub references: Vec<WireReference>,
    pub degraded: bool,
    pub warnings: Vec<String>,
    /// Stage name to elapsed milliseconds.
    pub timings_ms: BTreeMap<String, f64>,
}

impl From<PipelineAnswer> for QueryResponse {
    fn from(a: PipelineAnswer) -> Self {
        let t = &a.timings;
        let timings_ms = [
            ("embed", t.embed),
            ("retrieve", t.retrieve),
            ("judge", t.judge),
            ("fine_tuned", t.fine_tuned),
            ("foundational", t.foundational),
        ]
        .into_iter()
        .map(|(k, d)| (k.to_string(), d.as_secs_f64() * 1e3))
        .collect();
        Self {
            question: a.question,
            outcome: a.outcome,
            final_answer: a.final_answer,
            answer1: a.answer1,
            answer2: a.answer2,
            references: a.references.into_iter().map(Into::into).collect(),
            degraded: a.degraded,
            warnings: a.warnings,
            timings_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub id: String,
}
