//! Ranking objective, negative sampling, the epoch loop and adaptive
//! relevance labeling.

mod adaptive;
mod loss;
mod negatives;
mod trainer;

use crate::data::SupportLevel;

pub use adaptive::{
    adaptive_round, confident_clusters, AdaptiveConfig, AdaptiveOutcome, AdaptiveReport,
    ClusterDecision, ThresholdPolicy, UnlabeledPair,
};
pub use loss::{
    list_loss, list_loss_with_grad, pair_loss, pair_loss_with_grad, total_loss, LossConfig,
    LossValue,
};
pub use negatives::{
    group_tuples, in_batch_negatives, select_hard_negatives, HardNegativeSelection, QueryGroup,
};
pub use trainer::{
    best_chunk, cluster_confidence, evaluate_documents, load_dev_queries, query_confidence, train,
    write_metrics_csv, DevQuery, EpochMetrics, Phase, TrainOutcome, TrainSchedule, DEV_CUTOFFS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub doc_id: String,
    pub label: SupportLevel,
    /// Predicted similarity under the model that selected this candidate.
    pub score: f64,
}

/// A question with its positive and negative evidence candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub query: String,
    pub candidates: Vec<Candidate>,
    /// Index of the designated full-support candidate.
    pub positive: usize,
}
