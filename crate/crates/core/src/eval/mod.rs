//! Captioning metrics, exact match, rank-then-rerank retrieval and the
//! metrics report.

mod cider;
mod meteor;
mod ngram;
mod report;
mod retrieval;

pub use cider::{cider, CiderConfig, CiderScores, IdfMode};
pub use meteor::{meteor_alignment, meteor_like, FMean, MeteorConfig, MeteorScore};
pub use ngram::{bleu, clipped_counts, exact_match, lcs_len, ngram_counts, rouge_l, BleuScore, RougeScore};
pub use report::{AggregateMetrics, ExampleMetrics, MetricsReport, RetrievalSummary, ScoredExample};
pub use retrieval::{evaluate_retrieval, rank_by_scores, retrieval_metrics, retrieve, PlpMatcher, Direction, MatchScorer, RetrievalIndex, RetrievalMetrics};

/// Slot for an embedding-based similarity (for example a domain-specific
/// sentence encoder). Nothing in this crate implements it.
pub trait EmbeddingSimilarity {
    fn score(&self, candidate: &str, reference: &str) -> f64;
}
