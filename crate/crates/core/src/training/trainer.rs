use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::negatives::{group_tuples, in_batch_negatives, QueryGroup};
use super::{CandidateSet, LossConfig};
use crate::data::{read_jsonl, Corpus, EvidenceChunk, TrainingTuple};
use crate::encoder::{
    apply_update, dot, forward_backward, EmbeddingVector, EncoderParams, OptimizerConfig,
    OptimizerKind, OptimizerState, Side,
};
use crate::error::{Error, Result};
use crate::index::{recall_at_k, RetrievalResult, VectorIndex};
use crate::text::substream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Epochs with in-batch negatives only.
    pub warmup_epochs: usize,
    /// Epochs with label-aware hard negatives.
    pub main_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Optimizer steps between refreshes of the cached evidence embeddings.
    pub refresh_interval: usize,
    /// Hard negatives kept per question.
    pub hard_negatives: usize,
    /// Fraction of all steps spent on linear learning-rate warmup.
    pub warmup_ratio: f64,
    pub weight_decay: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            warmup_epochs: 1,
            main_epochs: 10,
            batch_size: 32,
            lr: 1e-2,
            seed: 0,
            refresh_interval: 500,
            hard_negatives: 7,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
        }
    }
}

impl TrainSchedule {
    /// Settings used for BERT-size encoders: AdamW at 2e-5, batch 256,
    /// embeddings refreshed every 5k steps.
    pub fn transformer_scale() -> Self {
        TrainSchedule {
            batch_size: 256,
            lr: 2e-5,
            refresh_interval: 5000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.batch_size == 0 {
            errs.push("batch_size must be positive");
        }
        if self.refresh_interval == 0 {
            errs.push("refresh_interval must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            errs.push("warmup_ratio must be in [0, 1]");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(errs.join("; ")))
        }
    }
}

/// Held-out queries with the ids of answer-bearing documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevQuery {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub gold_ids: Vec<String>,
    #[serde(default)]
    pub answers: Vec<String>,
}

pub fn load_dev_queries(path: &Path) -> Result<Vec<DevQuery>> {
    read_jsonl(path, |line, n| {
        serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: n,
            message: e.to_string(),
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Main,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean per candidate set.
    pub loss_list: f64,
    pub loss_pair: f64,
    pub steps: usize,
    pub sets: usize,
    /// Recall on the dev queries keyed by cutoff, when dev queries are given.
    pub dev_recall: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub history: Vec<EpochMetrics>,
    pub steps: usize,
    pub refreshes: usize,
    /// Questions that had no hard negative and trained on in-batch ones only.
    pub flagged: Vec<String>,
    pub without_positive: Vec<String>,
}

pub const DEV_CUTOFFS: [usize; 3] = [1, 10, 20];

/// Retrieval over whole documents with the current encoder.
pub fn evaluate_documents(
    params: &EncoderParams,
    corpus: &Corpus,
    queries: &[DevQuery],
    cutoffs: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let index = VectorIndex::build(
        corpus
            .iter()
            .map(|d| Ok((d.id.clone(), params.encode(&d.text, Side::Document)?)))
            .collect::<Result<Vec<_>>>()?,
        String::new(),
    )?;
    let depth = cutoffs.iter().copied().max().unwrap_or(1);
    let results = queries
        .iter()
        .map(|q| {
            let v = params.encode(&q.question, Side::Query)?;
            index.search(&q.id, &v, depth)
        })
        .collect::<Result<Vec<RetrievalResult>>>()?;
    let gold: BTreeMap<String, Vec<String>> = queries
        .iter()
        .map(|q| (q.id.clone(), q.gold_ids.clone()))
        .collect();
    Ok(cutoffs
        .iter()
        .map(|&k| (k, recall_at_k(&results, &gold, k)))
        .collect())
}

struct EvidenceCache {
    embeddings: Vec<Option<EmbeddingVector>>,
}

impl EvidenceCache {
    fn refresh(params: &EncoderParams, tuples: &[TrainingTuple]) -> Result<Self> {
        let embeddings = tuples
            .iter()
            .map(|t| params.encode(&t.evidence.text, Side::Document).map(Some))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvidenceCache { embeddings })
    }

    fn score(&self, query: &EmbeddingVector, tuple: usize) -> f64 {
        self.embeddings[tuple]
            .as_ref()
            .map_or(0.0, |e| dot(query.as_slice(), e.as_slice()))
    }
}

/// Trains the dual encoder on relevance tuples: in-batch negatives during
/// warmup (list-wise loss only), then hard negatives ranked by the current
/// model plus in-batch negatives with the full objective.
pub fn train(
    corpus: &Corpus,
    tuples: &[TrainingTuple],
    dev: Option<&[DevQuery]>,
    init: EncoderParams,
    schedule: &TrainSchedule,
    loss: &LossConfig,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    loss.validate()?;
    if tuples.is_empty() {
        return Err(Error::InvalidArgument("empty tuple set".into()));
    }
    let (groups, without_positive) = group_tuples(tuples);
    if groups.is_empty() {
        return Err(Error::InvalidArgument(
            "no tuple carries full support".into(),
        ));
    }

    let mut params = init;
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(schedule.seed, "train"));
    let epochs = schedule.warmup_epochs + schedule.main_epochs;
    let steps_per_epoch = groups.len().div_ceil(schedule.batch_size);
    let total_steps = epochs * steps_per_epoch;
    let lr_warmup_steps = (schedule.warmup_ratio * total_steps as f64).ceil() as usize;
    let mut optimizer = OptimizerState::new(OptimizerConfig {
        kind: OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        weight_decay: schedule.weight_decay,
    });
    let warmup_loss = LossConfig {
        pairwise_weight: 0.0,
        ..*loss
    };

    let mut history = Vec::with_capacity(epochs);
    let mut cache: Option<EvidenceCache> = None;
    let mut since_refresh = 0usize;
    let mut refreshes = 0usize;
    let mut step = 0usize;
    let mut flagged: Vec<String> = Vec::new();
    let mut order: Vec<usize> = (0..groups.len()).collect();

    for epoch in 0..epochs {
        let phase = if epoch < schedule.warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Main
        };
        order.shuffle(&mut rng);
        let (mut sum_list, mut sum_pair, mut n_sets, mut n_steps) = (0.0, 0.0, 0usize, 0usize);

        for batch in order.chunks(schedule.batch_size) {
            let sets: Vec<CandidateSet> = match phase {
                Phase::Warmup => batch
                    .iter()
                    .map(|&g| groups[g].select(tuples, 0, &mut |_| 0.0))
                    .collect(),
                Phase::Main => {
                    if cache.is_none() || since_refresh >= schedule.refresh_interval {
                        cache = Some(EvidenceCache::refresh(&params, tuples)?);
                        since_refresh = 0;
                        refreshes += 1;
                    }
                    let cache = cache.as_ref().expect("refreshed above");
                    batch
                        .iter()
                        .map(|&g| select_for(&params, &groups[g], tuples, cache, schedule, &mut flagged))
                        .collect::<Result<_>>()?
                }
            };
            let sets: Vec<CandidateSet> = in_batch_negatives(&sets)
                .into_iter()
                .filter(|s| s.candidates.len() > 1)
                .collect();
            if sets.is_empty() {
                continue;
            }
            let cfg = if phase == Phase::Warmup { &warmup_loss } else { loss };
            let out = forward_backward(&params, &sets, cfg)?;
            let scale = if lr_warmup_steps == 0 {
                1.0
            } else {
                ((step + 1) as f64 / lr_warmup_steps as f64).min(1.0)
            };
            apply_update(&mut params, &out.grads, &mut optimizer, schedule.lr * scale);
            if !params.is_finite() {
                return Err(Error::Invariant(format!("non-finite parameters after step {step}")));
            }
            step += 1;
            since_refresh += 1;
            n_steps += 1;
            n_sets += sets.len();
            sum_list += out.loss_list;
            sum_pair += out.loss_pair;
        }

        let dev_recall = match dev {
            Some(queries) if !queries.is_empty() => {
                evaluate_documents(&params, corpus, queries, &DEV_CUTOFFS)?
            }
            _ => BTreeMap::new(),
        };
        let denom = n_sets.max(1) as f64;
        let metrics = EpochMetrics {
            epoch,
            phase,
            loss_list: sum_list / denom,
            loss_pair: sum_pair / denom,
            steps: n_steps,
            sets: n_sets,
            dev_recall,
        };
        log::info!(
            "epoch {epoch} ({phase:?}): loss_list {:.4} loss_pair {:.4} dev {:?}",
            metrics.loss_list,
            metrics.loss_pair,
            metrics.dev_recall
        );
        history.push(metrics);
    }

    flagged.sort();
    flagged.dedup();
    Ok(TrainOutcome {
        params,
        history,
        steps: step,
        refreshes,
        flagged,
        without_positive,
    })
}

fn select_for(
    params: &EncoderParams,
    group: &QueryGroup,
    tuples: &[TrainingTuple],
    cache: &EvidenceCache,
    schedule: &TrainSchedule,
    flagged: &mut Vec<String>,
) -> Result<CandidateSet> {
    let q = params.encode(&group.question, Side::Query)?;
    let set = group.select(tuples, schedule.hard_negatives, &mut |i| cache.score(&q, i));
    if set.candidates.len() == 1 {
        flagged.push(group.question.clone());
    }
    Ok(set)
}

/// Writes one `train` row and, when dev recall exists, one `dev` row per epoch.
pub fn write_metrics_csv(history: &[EpochMetrics], oracle_calls_cum: u64, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([
        "epoch",
        "split",
        "loss_list",
        "loss_pair",
        "recall@10",
        "recall@20",
        "oracle_calls_cum",
    ])
    .map_err(io)?;
    let calls = oracle_calls_cum.to_string();
    for m in history {
        let epoch = m.epoch.to_string();
        w.write_record([
            epoch.as_str(),
            "train",
            &format!("{:.6}", m.loss_list),
            &format!("{:.6}", m.loss_pair),
            "",
            "",
            &calls,
        ])
        .map_err(io)?;
        if !m.dev_recall.is_empty() {
            let r = |k| m.dev_recall.get(&k).map(|v| format!("{v:.6}")).unwrap_or_default();
            w.write_record([epoch.as_str(), "dev", "", "", &r(10), &r(20), &calls])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Largest cosine between the question and any chunk, with the index of the
/// first chunk attaining it.
pub fn best_chunk(
    params: &EncoderParams,
    question: &str,
    chunks: &[EvidenceChunk],
) -> Result<(usize, f64)> {
    if chunks.is_empty() {
        return Err(Error::NoChunks);
    }
    let q = params.encode(question, Side::Query)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in chunks.iter().enumerate() {
        let s = dot(q.as_slice(), params.encode(&c.text, Side::Document)?.as_slice());
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}

/// Model confidence for a question: its best chunk similarity.
pub fn query_confidence(
    params: &EncoderParams,
    question: &str,
    chunks: &[EvidenceChunk],
) -> Result<f64> {
    best_chunk(params, question, chunks).map(|(_, s)| s)
}

/// Mean of member confidences.
pub fn cluster_confidence(confidences: &[f64]) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::InvalidArgument("cluster has no members".into()));
    }
    Ok(confidences.iter().sum::<f64>() / confidences.len() as f64)
}
