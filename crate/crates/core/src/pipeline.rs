//! Question answering over a collection: retrieve, filter by distance,
//! rerank with the QIM judge, then combine retrieved context with the
//! fine-tuned model's answer in a prompt for the foundational model.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{ProviderError, Providers};
use crate::similarity::{qim, SimilarityError, DEFAULT_BINS, MAX_BINS, MIN_BINS};
use crate::store::{filter_by_distance, Collection, RankedResult, StoreError, DEFAULT_DISTANCE_THRESHOLD};

pub const COMBINE_TEMPLATE_VERSION: &str = "combine-v1";
pub const ANSWER1_CHAR_CAP: usize = 4000;
pub const DEFAULT_TOP_K: usize = 5;
pub const NO_RELEVANT_CONTENT: &str = "No relevant content was found for this question.";
const UNAVAILABLE: &str = "[unavailable]";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("question has no embeddable tokens")]
    DegenerateQuery,
    #[error("collection is empty")]
    EmptyCollection,
    #[error("embedding provider failed: {0}")]
    Embedding(#[source] ProviderError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::EmptyCollection => Self::EmptyCollection,
            other => Self::Store(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerOptions {
    pub k: usize,
    /// Maximum cosine distance a reference may have.
    pub threshold: f64,
    /// Bin count for the QIM judge.
    pub q: usize,
    /// Optional judge cutoff; off by default.
    pub min_qim: Option<f64>,
}

impl Default for AnswerOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            threshold: DEFAULT_DISTANCE_THRESHOLD,
            q: DEFAULT_BINS,
            min_qim: None,
        }
    }
}

impl AnswerOptions {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::InvalidOptions("k must be >= 1".into()));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(PipelineError::InvalidOptions("threshold must be finite and >= 0".into()));
        }
        if !(MIN_BINS..=MAX_BINS).contains(&self.q) {
            return Err(PipelineError::InvalidOptions(format!(
                "q must be in [{MIN_BINS}, {MAX_BINS}]"
            )));
        }
        if self.min_qim.is_some_and(|m| !m.is_finite()) {
            return Err(PipelineError::InvalidOptions("min_qim must be finite".into()));
        }
        Ok(())
    }
}

/// Scores every candidate with `qim(query, candidate, q)` and orders by QIM
/// descending, then cosine descending, then chunk id.
pub fn judge_rerank(
    query: &[f64],
    results: Vec<RankedResult>,
    q: usize,
) -> Result<Vec<RankedResult>, SimilarityError> {
    let mut scored = results
        .into_iter()
        .map(|mut r| {
            r.qim_score = Some(qim(query, &r.chunk.embedding, q)?);
            Ok(r)
        })
        .collect::<Result<Vec<_>, SimilarityError>>()?;
    scored.sort_by(|a, b| {
        let (qa, qb) = (a.qim_score.unwrap_or(0.0), b.qim_score.unwrap_or(0.0));
        qb.total_cmp(&qa)
            .then(b.cosine.total_cmp(&a.cosine))
            .then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id))
    });
    Ok(scored)
}

/// Prompt for the foundational model. The layout is fixed so tests can pin
/// it; bump [`COMBINE_TEMPLATE_VERSION`] when it changes.
pub fn compose_combined_prompt(question: &str, answer1: &str, answer2: &str) -> String {
    let block = |s: &str| {
        if s.trim().is_empty() {
            UNAVAILABLE.to_string()
        } else {
            s.trim().to_string()
        }
    };
    format!(
        "[template {COMBINE_TEMPLATE_VERSION}]\n\
         System: Answer the question using the two context blocks below. Prefer facts stated in the context and say so when they do not cover the question.\n\
         Question: {question}\n\
         Context A (retrieved): {}\n\
         Context B (fine-tuned model): {}\n\
         Answer:",
        block(answer1),
        block(answer2)
    )
}

/// Joins reference texts in order, stopping before the chunk that would push
/// the total past `cap` characters. The first chunk is always kept whole.
pub fn concat_references(results: &[RankedResult], cap: usize) -> String {
    let mut out = String::new();
    let mut len = 0;
    for (i, r) in results.iter().enumerate() {
        let text = r.chunk.text.trim();
        let add = text.chars().count() + if i == 0 { 0 } else { 2 };
        if i > 0 && len + add > cap {
            break;
        }
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(text);
        len += add;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Answered,
    NoRelevantContent,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub embed: Duration,
    pub retrieve: Duration,
    pub judge: Duration,
    pub fine_tuned: Duration,
    pub foundational: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineAnswer {
    pub question: String,
    pub outcome: Outcome,
    /// Retrieved context, the concatenation of the reference texts.
    pub answer1: String,
    /// Distance-filtered, judge-ordered references.
    pub references: Vec<RankedResult>,
    pub answer2: String,
    pub final_answer: String,
    /// A generator failed and a fallback was used.
    pub degraded: bool,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
}

pub fn answer(
    question: &str,
    collection: &Collection,
    providers: &Providers,
    options: &AnswerOptions,
) -> Result<PipelineAnswer, PipelineError> {
    options.validate()?;
    if question.trim().is_empty() {
        return Err(PipelineError::EmptyQuestion);
    }
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let query = providers
        .embedder
        .embed(question)
        .map_err(PipelineError::Embedding)?;
    timings.embed = t.elapsed();
    if query.is_degenerate() {
        return Err(PipelineError::DegenerateQuery);
    }

    let t = Instant::now();
    let candidates = collection.query_topk(&query, options.k)?;
    let survivors = filter_by_distance(candidates, options.threshold);
    timings.retrieve = t.elapsed();

    let t = Instant::now();
    let mut references = judge_rerank(&query, survivors, options.q)?;
    if let Some(min) = options.min_qim {
        references.retain(|r| r.qim_score.unwrap_or(0.0) >= min);
    }
    timings.judge = t.elapsed();

    if references.is_empty() {
        return Ok(PipelineAnswer {
            question: question.to_string(),
            outcome: Outcome::NoRelevantContent,
            answer1: String::new(),
            references,
            answer2: String::new(),
            final_answer: NO_RELEVANT_CONTENT.to_string(),
            degraded: false,
            warnings: Vec::new(),
            timings,
        });
    }

    let answer1 = concat_references(&references, ANSWER1_CHAR_CAP);
    let mut warnings = Vec::new();
    let mut degraded = false;

    let t = Instant::now();
    let answer2 = providers.fine_tuned.generate(question).unwrap_or_else(|e| {
        degraded = true;
        warnings.push(format!("fine-tuned provider: {e}"));
        String::new()
    });
    timings.fine_tuned = t.elapsed();

    let t = Instant::now();
    let prompt = compose_combined_prompt(question, &answer1, &answer2);
    let final_answer = match providers.foundational.generate(&prompt) {
        Ok(s) if !s.trim().is_empty() => s,
        Ok(_) => {
            degraded = true;
            warnings.push("foundational provider returned an empty answer".into());
            answer1.clone()
        }
        Err(e) => {
            degraded = true;
            warnings.push(format!("foundational provider: {e}"));
            answer1.clone()
        }
    };
    timings.foundational = t.elapsed();

    Ok(PipelineAnswer {
        question: question.to_string(),
        outcome: Outcome::Answered,
        answer1,
        references,
        answer2,
        final_answer,
        degraded,
        warnings,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::det_embed;
    use crate::providers::{HashEmbedder, ProviderMode, StubGenerator};
    use crate::similarity::Embedding;
    use crate::store::ChunkRecord;
    use std::sync::Arc;

    fn result(id: &str, emb: Vec<f64>, cosine: f64) -> RankedResult {
        RankedResult::new(
            ChunkRecord {
                chunk_id: id.into(),
                doc_id: "1".into(),
                ordinal: 0,
                text: format!("text {id}"),
                embedding: Embedding::new(emb).unwrap(),
            },
            cosine,
        )
    }

    fn stub_providers(dimension: usize) -> Providers {
        Providers {
            embedder: Arc::new(HashEmbedder { dimension }),
            fine_tuned: Arc::new(StubGenerator::Echo),
            foundational: Arc::new(StubGenerator::Echo),
            qa_generator: Arc::new(StubGenerator::Extractive),
        }
    }

    fn collection(texts: &[&str], dimension: usize) -> Collection {
        let c = Collection::new("t", dimension).unwrap();
        c.upsert(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| ChunkRecord {
                    chunk_id: format!("c{i}"),
                    doc_id: i.to_string(),
                    ordinal: 0,
                    text: t.to_string(),
                    embedding: det_embed(t, dimension),
                })
                .collect(),
        )
        .unwrap();
        c
    }

    #[test]
    fn single_candidate_gets_score() {
        let out = judge_rerank(&[1.0, 2.0, 3.0], vec![result("a", vec![3.0, 1.0, 2.0], 0.5)], 2).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].qim_score.is_some());
    }

    #[test]
    fn identical_candidate_ranks_first() {
        let query: Vec<f64> = (0..32).map(|i| ((i * 7) % 11) as f64).collect();
        let mut other = query.clone();
        other.reverse();
        let noisy: Vec<f64> = query.iter().enumerate().map(|(i, v)| v + (i % 3) as f64).collect();
        let out = judge_rerank(
            &query,
            vec![result("rev", other, 0.9), result("same", query.clone(), 1.0), result("noisy", noisy, 0.95)],
            4,
        )
        .unwrap();
        assert_eq!(out[0].chunk.chunk_id, "same");
    }

    #[test]
    fn equal_qim_breaks_tie_on_cosine() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        let out = judge_rerank(&v, vec![result("lo", v.clone(), 0.4), result("hi", v.clone(), 0.6)], 2).unwrap();
        assert_eq!(out[0].qim_score, out[1].qim_score);
        assert_eq!(out[0].chunk.chunk_id, "hi");
    }

    #[test]
    fn judge_dimension_mismatch() {
        assert!(judge_rerank(&[1.0, 2.0], vec![result("a", vec![1.0], 1.0)], 2).is_err());
    }

    #[test]
    fn combined_prompt_layout() {
        let p = compose_combined_prompt("How do I apply?", "Fill in the form.", "");
        assert!(p.contains("Context B (fine-tuned model): [unavailable]"));
        assert_eq!(p.matches("Context A (retrieved):").count(), 1);
        assert_eq!(p.matches("Context B (fine-tuned model):").count(), 1);
        assert_eq!(p, compose_combined_prompt("How do I apply?", "Fill in the form.", ""));
        let qi = p.find("Question:").unwrap();
        let ai = p.find("Context A").unwrap();
        let bi = p.find("Context B").unwrap();
        assert!(p.starts_with("[template combine-v1]\nSystem:"));
        assert!(qi < ai && ai < bi);
    }

    #[test]
    fn answer1_cap_respects_chunk_boundaries() {
        let big = |id: &str| {
            let mut r = result(id, vec![1.0], 1.0);
            r.chunk.text = "y".repeat(1500);
            r
        };
        let refs = vec![big("a"), big("b"), big("c")];
        let s = concat_references(&refs, ANSWER1_CHAR_CAP);
        assert_eq!(s.chars().count(), 1500 * 2 + 2);
    }

    #[test]
    fn option_validation() {
        assert!(AnswerOptions::default().validate().is_ok());
        for bad in [
            AnswerOptions { k: 0, ..Default::default() },
            AnswerOptions { threshold: -0.1, ..Default::default() },
            AnswerOptions { q: 1, ..Default::default() },
            AnswerOptions { q: 257, ..Default::default() },
            AnswerOptions { min_qim: Some(f64::NAN), ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(PipelineError::InvalidOptions(_))));
        }
    }

    #[test]
    fn echo_stubs_carry_question_through() {
        let c = collection(&["shelter beds open nightly", "board meets monthly"], 64);
        let p = stub_providers(64);
        let opts = AnswerOptions { threshold: 2.0, ..Default::default() };
        let a = answer("When do shelter beds open?", &c, &p, &opts).unwrap();
        assert_eq!(a.outcome, Outcome::Answered);
        assert!(a.final_answer.contains("When do shelter beds open?"));
        assert_eq!(a.answer2, "When do shelter beds open?");
        assert!(!a.degraded);
        assert!(a.references.iter().all(|r| r.qim_score.is_some()));
    }

    #[test]
    fn zero_threshold_without_exact_match() {
        let c = collection(&["shelter beds open nightly"], 64);
        let opts = AnswerOptions { threshold: 0.0, ..Default::default() };
        let a = answer("how do I apply", &c, &stub_providers(64), &opts).unwrap();
        assert_eq!(a.outcome, Outcome::NoRelevantContent);
        assert!(a.references.is_empty());
        assert_eq!(a.final_answer, NO_RELEVANT_CONTENT);
    }

    #[test]
    fn generator_failure_degrades() {
        let c = collection(&["shelter beds open nightly"], 64);
        let mut p = stub_providers(64);
        p.foundational = Arc::new(StubGenerator::Fail);
        p.fine_tuned = Arc::new(StubGenerator::Fail);
        let opts = AnswerOptions { threshold: 2.0, ..Default::default() };
        let a = answer("shelter beds", &c, &p, &opts).unwrap();
        assert!(a.degraded);
        assert_eq!(a.final_answer, a.answer1);
        assert_eq!(a.warnings.len(), 2);
        assert_eq!(p.foundational.mode(), ProviderMode::Stub);
    }

    #[test]
    fn min_qim_cutoff_drops_everything_when_huge() {
        let c = collection(&["shelter beds open nightly"], 64);
        let opts = AnswerOptions { threshold: 2.0, min_qim: Some(1e12), ..Default::default() };
        let a = answer("shelter beds", &c, &stub_providers(64), &opts).unwrap();
        assert_eq!(a.outcome, Outcome::NoRelevantContent);
    }

    #[test]
    fn error_paths() {
        let p = stub_providers(64);
        let empty = Collection::new("e", 64).unwrap();
        assert!(matches!(
            answer("shelter", &empty, &p, &AnswerOptions::default()),
            Err(PipelineError::EmptyCollection)
        ));
        let c = collection(&["x"], 64);
        assert!(matches!(answer("  ", &c, &p, &AnswerOptions::default()), Err(PipelineError::EmptyQuestion)));
        assert!(matches!(answer("?!", &c, &p, &AnswerOptions::default()), Err(PipelineError::DegenerateQuery)));
    }
}
