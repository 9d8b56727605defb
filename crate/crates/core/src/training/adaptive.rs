//! One round of adaptive relevance labeling: confident question clusters are
//! self-labeled by the retriever, the rest go to the oracle.

use serde::{Deserialize, Serialize};

use super::trainer::{best_chunk, cluster_confidence};
use crate::cluster::QuestionCluster;
use crate::data::{chunk_document, ChunkingPolicy, Document, Provenance, SupportLevel, TrainingTuple};
use crate::encoder::{EncoderParams, TextEmbedder};
use crate::error::{Error, Result};
use crate::labeler::{annotate_pair, BudgetedOracle, LabelerOracle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdPolicy {
    /// Confident when the cluster confidence is at least this cosine.
    Absolute(f64),
    /// Confident when the cluster ranks in the top `100 - p` percent of
    /// eligible clusters by confidence, rounded to the nearest cluster count.
    Percentile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub threshold: ThresholdPolicy,
    /// Smaller clusters are never trusted for self-labeling.
    pub min_cluster_size: usize,
    /// Oracle calls allowed in one round; unlimited when absent.
    pub round_budget: Option<u64>,
    /// Oracle-scored negatives mined per routed question.
    pub negatives_per_query: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            threshold: ThresholdPolicy::Percentile(70.0),
            min_cluster_size: 1,
            round_budget: None,
            negatives_per_query: 2,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        match self.threshold {
            ThresholdPolicy::Absolute(t) if !(-1.0..=1.0).contains(&t) => Err(
                Error::InvalidArgument(format!("absolute threshold {t} outside [-1, 1]")),
            ),
            ThresholdPolicy::Percentile(p) if !(0.0..=100.0).contains(&p) => Err(
                Error::InvalidArgument(format!("percentile {p} outside [0, 100]")),
            ),
            _ => Ok(()),
        }
    }
}

/// A question paired with the document it should be answered from.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPair {
    pub question: String,
    pub doc: Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDecision {
    pub cluster_id: usize,
    pub size: usize,
    pub confidence: f64,
    pub confident: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveReport {
    pub clusters: Vec<ClusterDecision>,
    pub oracle_calls: u64,
    pub self_labeled: usize,
    pub oracle_labeled: usize,
    pub routed_questions: usize,
    /// Routed questions left unlabeled because the budget ran out.
    pub unlabeled_questions: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub self_labeled: Vec<TrainingTuple>,
    pub oracle_labeled: Vec<TrainingTuple>,
    pub report: AdaptiveReport,
}

/// Indices of clusters judged confident, given their confidences.
pub fn confident_clusters(
    confidences: &[(usize, f64, bool)],
    policy: ThresholdPolicy,
) -> Vec<usize> {
    let eligible: Vec<(usize, f64)> = confidences
        .iter()
        .filter(|c| c.2)
        .map(|c| (c.0, c.1))
        .collect();
    match policy {
        ThresholdPolicy::Absolute(t) => eligible.iter().filter(|c| c.1 >= t).map(|c| c.0).collect(),
        ThresholdPolicy::Percentile(p) => {
            let mut ranked = eligible;
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let take = ((100.0 - p) / 100.0 * ranked.len() as f64).round() as usize;
            ranked.into_iter().take(take).map(|c| c.0).collect()
        }
    }
}

/// Scores every clustered question by its best chunk, averages per cluster,
/// self-labels members of confident clusters with their best chunk and sends
/// the remaining members through the oracle annotation pipeline.
///
/// `clusters[i].member_ids` index into `pairs`; their `confidence` is filled
/// in. When the round budget runs out the tuples gathered so far are returned
/// with `budget_exhausted` set.
pub fn adaptive_round(
    params: &EncoderParams,
    pairs: &[UnlabeledPair],
    clusters: &mut [QuestionCluster],
    cfg: &AdaptiveConfig,
    oracle: &dyn LabelerOracle,
    chunking: &ChunkingPolicy,
    negative_embedder: &dyn TextEmbedder,
) -> Result<AdaptiveOutcome> {
    cfg.validate()?;
    let chunks: Vec<_> = pairs.iter().map(|p| chunk_document(&p.doc, chunking)).collect();

    let mut best = vec![None; pairs.len()];
    let mut summary = Vec::with_capacity(clusters.len());
    for (ci, cluster) in clusters.iter_mut().enumerate() {
        let mut member_conf = Vec::with_capacity(cluster.member_ids.len());
        for &m in &cluster.member_ids {
            let pair = pairs.get(m).ok_or_else(|| {
                Error::InvalidArgument(format!("cluster member {m} has no question pair"))
            })?;
            let (idx, sim) = best_chunk(params, &pair.question, &chunks[m])?;
            best[m] = Some(idx);
            member_conf.push(sim);
        }
        let conf = cluster_confidence(&member_conf)?;
        cluster.confidence = Some(conf);
        summary.push((ci, conf, cluster.member_ids.len() >= cfg.min_cluster_size));
    }
    let confident = confident_clusters(&summary, cfg.threshold);

    let mut self_labeled = Vec::new();
    let mut routed = Vec::new();
    let mut decisions = Vec::with_capacity(clusters.len());
    for (ci, cluster) in clusters.iter().enumerate() {
        let is_confident = confident.contains(&ci);
        decisions.push(ClusterDecision {
            cluster_id: cluster.id,
            size: cluster.member_ids.len(),
            confidence: summary[ci].1,
            confident: is_confident,
        });
        for &m in &cluster.member_ids {
            if is_confident {
                let chunk = chunks[m][best[m].expect("scored above")].clone();
                self_labeled.push(TrainingTuple::new(
                    pairs[m].question.clone(),
                    chunk,
                    SupportLevel::Full,
                    Provenance::SelfLabeled,
                )?);
            } else {
                routed.push(m);
            }
        }
    }
    routed.sort_unstable();

    let budgeted = BudgetedOracle::new(oracle, cfg.round_budget);
    let mut oracle_labeled = Vec::new();
    let mut budget_exhausted = false;
    let mut unlabeled = 0;
    for (n, &m) in routed.iter().enumerate() {
        let before = oracle_labeled.len();
        match annotate_pair(
            &budgeted,
            &pairs[m].question,
            &pairs[m].doc,
            &chunks[m],
            cfg.negatives_per_query,
            negative_embedder,
            Provenance::OracleLabeled,
            &mut oracle_labeled,
        ) {
            Ok(()) => {}
            Err(Error::BudgetExhausted { .. }) => {
                budget_exhausted = true;
                let started = oracle_labeled.len() > before;
                unlabeled = routed.len() - n - usize::from(started);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let report = AdaptiveReport {
        clusters: decisions,
        oracle_calls: budgeted.usage().calls,
        self_labeled: self_labeled.len(),
        oracle_labeled: oracle_labeled.len(),
        routed_questions: routed.len(),
        unlabeled_questions: unlabeled,
        budget_exhausted,
    };
    Ok(AdaptiveOutcome {
        self_labeled,
        oracle_labeled,
        report,
    })
}
