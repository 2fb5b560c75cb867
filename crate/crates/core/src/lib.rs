//! Retrieval-augmented question answering with a binned-statistic re-ranker
//! (QIM) for embedding similarity.

pub mod dataset;
pub mod embed;
pub mod eval;
pub mod feedback;
pub mod fixtures;
pub mod pipeline;
pub mod providers;
pub mod rng;
pub mod similarity;
pub mod simlab;
pub mod store;
pub mod tuner;

pub use dataset::{DatasetBundle, QAPair, TextChunk};
pub use embed::det_embed;
pub use eval::{EvalRow, EvalSummary};
pub use feedback::{FeedbackLog, FeedbackRecord, NewFeedback};
pub use pipeline::{AnswerOptions, Outcome, PipelineAnswer};
pub use providers::{Embedder, Generator, Providers, ProvidersConfig};
pub use rng::SplitMix64;
pub use similarity::{cosine_similarity, qim, BinPartition, Embedding, PartitionStats};
pub use simlab::{SweepConfig, SweepRecord};
pub use store::{ChunkRecord, Collection, RankedResult, VectorStore};
pub use tuner::{Axis, ParamPoint, Phase, SearchRanges, TraceEntry, TuneOutcome};
