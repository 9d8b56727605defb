//! Answering with retrieved evidence: middle-rank reordering, within-subset
//! permutations and likelihood ensembling over a reader.

mod reader;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{chunk_document, ChunkingPolicy, Corpus, Document, EvidenceChunk};
use crate::encoder::{dot, EncoderParams, Side};
use crate::error::{Error, Result};
use crate::index::{Hit, VectorIndex};
use crate::parallel::par_map_bounded;

pub use reader::{
    parse_likelihoods, reader_prompt, token_occurrences, LlmReader, MockReader, MockReaderConfig, Reader,
    MIDDLE_WEIGHT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderingPlan {
    /// Passages given to the reader.
    pub k: usize,
    /// Head and tail subset size; `k / 3` when absent.
    pub j: Option<usize>,
    /// Permutations ensembled.
    pub n: usize,
    pub seed: u64,
    /// Documents retrieved before chunk re-ranking in chunk mode.
    pub retrieve_depth: usize,
    /// Concurrent reader calls.
    pub max_in_flight: usize,
}

impl Default for OrderingPlan {
    fn default() -> Self {
        OrderingPlan {
            k: 9,
            j: None,
            n: 4,
            seed: 0,
            retrieve_depth: 50,
            max_in_flight: 4,
        }
    }
}

impl OrderingPlan {
    pub fn subset_size(&self) -> usize {
        self.j.unwrap_or(self.k / 3).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("plan needs k >= 1 and n >= 1".into()));
        }
        let j = self.subset_size();
        if self.k > 1 && j > self.k / 2 {
            return Err(Error::InvalidArgument(format!("j = {j} outside [1, {}]", self.k / 2)));
        }
        Ok(())
    }
}

/// A reordered list with the sizes of its head, middle and tail subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reordered<T> {
    pub order: Vec<T>,
    pub head: usize,
    pub middle: usize,
    pub tail: usize,
    /// Set for a single document, where there is nothing to reorder.
    pub degenerate: bool,
}

/// Puts the `j` most relevant items first, the next `j` last in reverse and
/// the remainder in between: `d1..dj, d(2j+1)..dk, d(2j)..d(j+1)`.
pub fn reorder<T: Clone>(docs: &[T], j: usize) -> Result<Reordered<T>> {
    let k = docs.len();
    if k == 0 {
        return Err(Error::InvalidArgument("nothing to reorder".into()));
    }
    if k == 1 {
        return Ok(Reordered {
            order: docs.to_vec(),
            head: 1,
            middle: 0,
            tail: 0,
            degenerate: true,
        });
    }
    if j == 0 || j > k / 2 {
        return Err(Error::InvalidArgument(format!("j = {j} outside [1, {}] for k = {k}", k / 2)));
    }
    let mut order = Vec::with_capacity(k);
    order.extend_from_slice(&docs[..j]);
    order.extend_from_slice(&docs[2 * j..]);
    order.extend(docs[j..2 * j].iter().rev().cloned());
    Ok(Reordered {
        order,
        head: j,
        middle: k - 2 * j,
        tail: j,
        degenerate: false,
    })
}

/// `n` orders: the reordered list itself, then copies shuffled within the
/// head, middle and tail subsets.
pub fn permutations<T: Clone>(r1: &Reordered<T>, n: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(r1.order.clone());
    for _ in 1..n {
        let mut p = r1.order.clone();
        let (head, rest) = p.split_at_mut(r1.head);
        let (middle, tail) = rest.split_at_mut(r1.middle);
        head.shuffle(&mut rng);
        middle.shuffle(&mut rng);
        tail.shuffle(&mut rng);
        out.push(p);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerScore {
    pub answer: String,
    /// Sum of the per-permutation likelihoods.
    pub score: f64,
    pub per_permutation: Vec<f64>,
}

impl AnswerScore {
    /// Mean likelihood over the successful permutations.
    pub fn normalized(&self) -> f64 {
        if self.per_permutation.is_empty() {
            0.0
        } else {
            self.score / self.per_permutation.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderCall {
    pub permutation: usize,
    pub order: Vec<String>,
    pub likelihoods: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    /// Descending score; ties keep candidate order.
    pub ranking: Vec<AnswerScore>,
    pub failed_permutations: Vec<usize>,
    pub calls: Vec<ReaderCall>,
}

impl Ensemble {
    pub fn best(&self) -> Option<&AnswerScore> {
        self.ranking.first()
    }
}

/// Sums reader likelihoods over permutations. A permutation whose reader
/// call fails, or returns a bad score vector, is skipped and listed in
/// `failed_permutations`; it is an error only when every call fails.
pub fn ensemble_answer(
    question: &str,
    candidates: &[String],
    perms: &[Vec<Passage>],
    reader: &dyn Reader,
    max_in_flight: usize,
) -> Result<Ensemble> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate answers".into()));
    }
    if perms.is_empty() {
        return Err(Error::InvalidArgument("no permutations".into()));
    }
    let results = par_map_bounded(perms, max_in_flight, |p| {
        let context: Vec<&str> = p.iter().map(|x| x.text.as_str()).collect();
        reader.score_answers(question, &context, candidates).and_then(|s| {
            if s.len() != candidates.len() || s.iter().any(|x| !x.is_finite() || *x < 0.0) {
                Err(Error::Invariant(format!(
                    "reader returned {} scores for {} candidates or a negative/non-finite score",
                    s.len(),
                    candidates.len()
                )))
            } else {
                Ok(s)
            }
        })
    });

    let mut ranking: Vec<AnswerScore> = candidates
        .iter()
        .map(|c| AnswerScore {
            answer: c.clone(),
            score: 0.0,
            per_permutation: Vec::new(),
        })
        .collect();
    let mut failed = Vec::new();
    let mut calls = Vec::with_capacity(perms.len());
    let mut first_error = None;
    for (i, (p, r)) in perms.iter().zip(results).enumerate() {
        let order = p.iter().map(|x| x.id.clone()).collect();
        match r {
            Ok(scores) => {
                for (a, s) in ranking.iter_mut().zip(&scores) {
                    a.score += s;
                    a.per_permutation.push(*s);
                }
                calls.push(ReaderCall {
                    permutation: i,
                    order,
                    likelihoods: Some(scores),
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("reader failed on permutation {i}: {e}");
                calls.push(ReaderCall {
                    permutation: i,
                    order,
                    likelihoods: None,
                    error: Some(e.to_string()),
                });
                failed.push(i);
                first_error.get_or_insert(e);
            }
        }
    }
    if failed.len() == perms.len() {
        return Err(first_error.expect("at least one failure"));
    }
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(Ensemble {
        ranking,
        failed_permutations: failed,
        calls,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedChunk {
    pub chunk: EvidenceChunk,
    pub score: f64,
}

/// Chunks every document and orders the chunks by re-ranker similarity to
/// the question. Ties keep document then chunk order.
pub fn rerank_chunks(
    question: &str,
    top_docs: &[&Document],
    policy: &ChunkingPolicy,
    scorer: &EncoderParams,
) -> Result<Vec<RankedChunk>> {
    let q = scorer.encode(question, Side::Query)?;
    let mut out = Vec::new();
    for doc in top_docs {
        for chunk in chunk_document(doc, policy) {
            let score = dot(q.as_slice(), scorer.encode(&chunk.text, Side::Document)?.as_slice());
            out.push(RankedChunk { chunk, score });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerMode {
    Docs,
    Chunks,
}

/// Everything that happened while answering one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub question: String,
    pub retrieved: Vec<Hit>,
    /// Passage ids by relevance, before reordering.
    pub passages: Vec<String>,
    pub r1: Vec<String>,
    pub permutations: Vec<Vec<String>>,
    pub degenerate: bool,
    pub ensemble: Ensemble,
}

/// Retrieve, reorder, permute and ensemble.
pub struct Pipeline<'a> {
    pub index: &'a VectorIndex,
    pub corpus: &'a Corpus,
    pub encoder: &'a EncoderParams,
    /// Chunk scorer for chunk mode; the retriever encoder when absent.
    pub reranker: Option<&'a EncoderParams>,
    pub plan: &'a OrderingPlan,
    pub chunking: &'a ChunkingPolicy,
    pub reader: &'a dyn Reader,
    pub mode: AnswerMode,
}

impl Pipeline<'_> {
    pub fn answer(&self, question: &str, candidates: &[String]) -> Result<AnswerTrace> {
        self.plan.validate()?;
        if self.index.is_empty() {
            return Err(Error::NoEvidence);
        }
        let q = self.encoder.encode(question, Side::Query)?;
        let depth = match self.mode {
            AnswerMode::Docs => self.plan.k,
            AnswerMode::Chunks => self.plan.retrieve_depth.max(self.plan.k),
        };
        let retrieved = self.index.search("q", &q, depth)?.hits;
        let docs = retrieved
            .iter()
            .map(|h| {
                self.corpus
                    .get(&h.id)
                    .ok_or_else(|| Error::InvalidData(format!("indexed id {:?} is not in the corpus", h.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let passages: Vec<Passage> = match self.mode {
            AnswerMode::Docs => docs
                .iter()
                .map(|d| Passage {
                    id: d.id.clone(),
                    text: d.text.clone(),
                })
                .collect(),
            AnswerMode::Chunks => {
                let scorer = self.reranker.unwrap_or(self.encoder);
                rerank_chunks(question, &docs, self.chunking, scorer)?
                    .into_iter()
                    .take(self.plan.k)
                    .map(|r| Passage {
                        id: format!("{}:{}-{}", r.chunk.doc_id, r.chunk.start, r.chunk.end),
                        text: r.chunk.text,
                    })
                    .collect()
            }
        };
        if passages.is_empty() {
            return Err(Error::NoEvidence);
        }
        let j = self.plan.subset_size().min(passages.len() / 2).max(1);
        let r1 = reorder(&passages, j)?;
        let perms = permutations(&r1, self.plan.n, self.plan.seed);
        let ensemble = ensemble_answer(question, candidates, &perms, self.reader, self.plan.max_in_flight)?;
        let ids = |ps: &[Passage]| ps.iter().map(|p| p.id.clone()).collect::<Vec<_>>();
        Ok(AnswerTrace {
            question: question.to_owned(),
            retrieved,
            passages: ids(&passages),
            r1: ids(&r1.order),
            permutations: perms.iter().map(|p| ids(p)).collect(),
            degenerate: r1.degenerate,
            ensemble,
        })
    }
}

/// Lowercases and drops punctuation, the articles a/an/the and extra
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, golds: &[String]) -> bool {
    let p = normalize_answer(prediction);
    golds.iter().any(|g| normalize_answer(g) == p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("d{i}")).collect()
    }

    #[test]
    fn reorder_examples() {
        let r = reorder(&ids(9), 3).unwrap();
        assert_eq!(r.order.join(" "), "d1 d2 d3 d7 d8 d9 d6 d5 d4");
        assert_eq!(reorder(&ids(2), 1).unwrap().order.join(" "), "d1 d2");
        let one = reorder(&ids(1), 1).unwrap();
        assert!(one.degenerate);
        assert_eq!(one.order, ids(1));
        assert!(reorder(&ids(9), 5).is_err());
        assert!(reorder(&ids(9), 0).is_err());
    }

    #[test]
    fn permutations_respect_subsets() {
        let r = reorder(&ids(6), 2).unwrap();
        let ps = permutations(&r, 100, 4);
        assert_eq!(ps[0], r.order);
        assert_eq!(permutations(&r, 1, 4), vec![r.order.clone()]);
        for p in &ps {
            let mut head = p[..2].to_vec();
            head.sort();
            assert_eq!(head, vec!["d1", "d2"]);
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, ids(6));
        }
        assert_eq!(ps, permutations(&r, 100, 4));
    }

    struct Fixed(Vec<Vec<f64>>);

    impl Reader for Fixed {
        fn score_answers(&self, _: &str, context: &[&str], _: &[String]) -> Result<Vec<f64>> {
            let i: usize = context[0].parse().unwrap();
            self.0.get(i).cloned().ok_or(Error::Transport {
                retryable: true,
                message: "down".into(),
            })
        }
    }

    fn perm(tag: &str) -> Vec<Passage> {
        vec![Passage {
            id: tag.into(),
            text: tag.into(),
        }]
    }

    #[test]
    fn ensemble_sums_and_ranks() {
        let reader = Fixed(vec![vec![0.2, 0.4], vec![0.3, 0.0]]);
        let c = vec!["first".to_string(), "second".to_string()];
        let e = ensemble_answer("q", &c, &[perm("0"), perm("1")], &reader, 1).unwrap();
        assert_eq!(e.best().unwrap().answer, "first");
        assert!((e.ranking[0].score - 0.5).abs() < 1e-12);
        assert!((e.ranking[1].score - 0.4).abs() < 1e-12);
        assert_eq!(e.calls.len(), 2);
    }

    #[test]
    fn failed_permutation_is_skipped_and_flagged() {
        let reader = Fixed(vec![vec![1.0]]);
        let c = vec!["a".to_string()];
        let e = ensemble_answer("q", &c, &[perm("0"), perm("5")], &reader, 2).unwrap();
        assert_eq!(e.failed_permutations, vec![1]);
        assert_eq!(e.ranking[0].per_permutation, vec![1.0]);
        assert!(ensemble_answer("q", &c, &[perm("5")], &reader, 2).is_err());
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer("The  Eiffel Tower!"), "eiffel tower");
        assert!(exact_match("an apple", &["Apple".into()]));
        assert!(!exact_match("apples", &["apple".into()]));
    }
}
