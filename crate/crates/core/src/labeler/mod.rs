//! LLM-as-labeler: question generation, evidence identification and
//! evidence scoring behind one oracle interface.

mod http;
mod mock;
mod prompt;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{Document, EvidenceChunk, Provenance, SupportLevel, TrainingTuple};
use crate::encoder::{dot, TextEmbedder};
use crate::error::{Error, Result};
use crate::parallel::par_map_bounded;

pub use http::{AuditRecord, ChatTransport, LlmOracle, TransportConfig};
pub use mock::{MockOracle, MOCK_TEMPLATE_WORDS};
pub use prompt::{parse_support_label, PromptSet, PromptTemplate};

/// A question produced from a document together with the chunk it was
/// asked about.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedQuestion {
    pub question: String,
    pub evidence: EvidenceChunk,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleUsage {
    pub calls: u64,
    pub cost: f64,
    pub parse_failures: u64,
}

pub trait LabelerOracle: Send + Sync {
    fn generate_question(&self, doc: &Document, demonstrations: &[String]) -> Result<GeneratedQuestion>;

    fn identify_evidence(&self, question: &str, doc: &Document) -> Result<(EvidenceChunk, SupportLevel)>;

    fn score_evidence(&self, question: &str, evidence: &EvidenceChunk) -> Result<SupportLevel>;

    fn usage(&self) -> OracleUsage;
}

/// Call counter, cost accumulator and optional call budget. All counters are
/// atomic so one meter can be shared by concurrent callers.
#[derive(Debug, Default)]
pub struct OracleMeter {
    calls: AtomicU64,
    parse_failures: AtomicU64,
    max_calls: Option<u64>,
    cost_per_call: f64,
}

impl OracleMeter {
    pub fn new(max_calls: Option<u64>, cost_per_call: f64) -> Self {
        OracleMeter {
            max_calls,
            cost_per_call,
            ..Default::default()
        }
    }

    /// Reserves one call, failing once the budget is spent.
    pub fn begin_call(&self) -> Result<()> {
        let mut used = self.calls.load(Ordering::SeqCst);
        loop {
            if let Some(limit) = self.max_calls {
                if used >= limit {
                    return Err(Error::BudgetExhausted { used, limit });
                }
            }
            match self
                .calls
                .compare_exchange(used, used + 1, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return Ok(()),
                Err(now) => used = now,
            }
        }
    }

    pub fn record_parse_failure(&self) {
        self.parse_failures.fetch_add(1, Ordering::SeqCst);
    }

    pub fn max_calls(&self) -> Option<u64> {
        self.max_calls
    }

    pub fn usage(&self) -> OracleUsage {
        let calls = self.calls.load(Ordering::SeqCst);
        OracleUsage {
            calls,
            cost: calls as f64 * self.cost_per_call,
            parse_failures: self.parse_failures.load(Ordering::SeqCst),
        }
    }
}

/// Limits the calls made through it to a budget of its own, independent of
/// any limit on the wrapped oracle. `usage` reports only calls made through
/// this wrapper.
pub struct BudgetedOracle<'a> {
    inner: &'a dyn LabelerOracle,
    meter: OracleMeter,
    failures_at_start: u64,
}

impl<'a> BudgetedOracle<'a> {
    pub fn new(inner: &'a dyn LabelerOracle, max_calls: Option<u64>) -> Self {
        BudgetedOracle {
            inner,
            meter: OracleMeter::new(max_calls, 0.0),
            failures_at_start: inner.usage().parse_failures,
        }
    }
}

impl LabelerOracle for BudgetedOracle<'_> {
    fn generate_question(&self, doc: &Document, demonstrations: &[String]) -> Result<GeneratedQuestion> {
        self.meter.begin_call()?;
        self.inner.generate_question(doc, demonstrations)
    }

    fn identify_evidence(&self, question: &str, doc: &Document) -> Result<(EvidenceChunk, SupportLevel)> {
        self.meter.begin_call()?;
        self.inner.identify_evidence(question, doc)
    }

    fn score_evidence(&self, question: &str, evidence: &EvidenceChunk) -> Result<SupportLevel> {
        self.meter.begin_call()?;
        self.inner.score_evidence(question, evidence)
    }

    fn usage(&self) -> OracleUsage {
        let own = self.meter.usage();
        let inner = self.inner.usage();
        let per_call = if inner.calls > 0 { inner.cost / inner.calls as f64 } else { 0.0 };
        OracleUsage {
            calls: own.calls,
            cost: own.calls as f64 * per_call,
            parse_failures: inner.parse_failures.saturating_sub(self.failures_at_start),
        }
    }
}

/// At most `k` pool chunks most similar to the positive evidence, by
/// descending cosine with ties to the earlier pool entry. Chunks with the
/// positive's exact span are skipped.
pub fn mine_negative_candidates(
    positive: &TrainingTuple,
    pool: &[EvidenceChunk],
    k: usize,
    embedder: &dyn TextEmbedder,
) -> Result<Vec<EvidenceChunk>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let target = embedder.embed(&positive.evidence.text)?;
    let own = &positive.evidence;
    let mut scored = Vec::with_capacity(pool.len());
    for (i, c) in pool.iter().enumerate() {
        if c.doc_id == own.doc_id && c.start == own.start && c.end == own.end {
            continue;
        }
        let v = embedder.embed(&c.text)?;
        scored.push((dot(target.as_slice(), v.as_slice()), i));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| pool[i].clone()).collect())
}

/// Labels one question against its document: the oracle identifies the
/// evidence, and when it fully supports the question up to `k` similar pool
/// chunks are mined and scored. Full-support negatives are discarded.
///
/// Tuples are appended to `out` as soon as they are labeled, so a budget
/// error leaves the work done so far in place.
#[allow(clippy::too_many_arguments)]
pub fn annotate_pair(
    oracle: &dyn LabelerOracle,
    question: &str,
    doc: &Document,
    pool: &[EvidenceChunk],
    k: usize,
    embedder: &dyn TextEmbedder,
    provenance: Provenance,
    out: &mut Vec<TrainingTuple>,
) -> Result<()> {
    let (evidence, support) = oracle.identify_evidence(question, doc)?;
    evidence.validate_against(doc)?;
    let positive = TrainingTuple::new(question, evidence, support, provenance)?;
    let full = support == SupportLevel::Full;
    out.push(positive);
    if !full || k == 0 {
        return Ok(());
    }
    let positive = out.last().expect("just pushed").clone();
    for chunk in mine_negative_candidates(&positive, pool, k, embedder)? {
        let label = oracle.score_evidence(question, &chunk)?;
        if label != SupportLevel::Full {
            out.push(TrainingTuple::new(question, chunk, label, provenance)?);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Negatives mined and scored per generated question.
    pub negatives_per_question: usize,
    /// Concurrent oracle pipelines.
    pub max_in_flight: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            negatives_per_question: 4,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub tuples: Vec<TrainingTuple>,
    /// Documents skipped because the budget ran out.
    pub skipped_docs: usize,
    pub budget_exhausted: bool,
}

/// Builds training tuples from documents: generate a question per document,
/// then identify and score evidence for it. Output order follows `docs`
/// regardless of parallelism.
pub fn generate_tuples(
    oracle: &dyn LabelerOracle,
    docs: &[Document],
    demonstrations: &[String],
    pool: &[EvidenceChunk],
    embedder: &(dyn TextEmbedder + Sync),
    cfg: &GenerationConfig,
) -> Result<GenerationOutcome> {
    let results = par_map_bounded(docs, cfg.max_in_flight, |doc| {
        let mut out = Vec::new();
        let generated = oracle.generate_question(doc, demonstrations);
        let r = generated.and_then(|g| {
            annotate_pair(
                oracle,
                &g.question,
                doc,
                pool,
                cfg.negatives_per_question,
                embedder,
                Provenance::Generated,
                &mut out,
            )
        });
        (r, out)
    });
    let mut tuples = Vec::new();
    let mut skipped = 0;
    let mut exhausted = false;
    for (r, out) in results {
        match r {
            Ok(()) => tuples.extend(out),
            Err(Error::BudgetExhausted { .. }) => {
                exhausted = true;
                if out.is_empty() {
                    skipped += 1;
                }
                tuples.extend(out);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(GenerationOutcome {
        tuples,
        skipped_docs: skipped,
        budget_exhausted: exhausted,
    })
}

/// Bounds the number of concurrent requests to an external service.
#[derive(Debug)]
pub struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: std::sync::Condvar,
}

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        InFlightGate {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: std::sync::Condvar::new(),
        }
    }

    pub fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        let out = f();
        *self.active.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.freed.notify_one();
        out
    }
}

impl Default for InFlightGate {
    fn default() -> Self {
        InFlightGate::new(4)
    }
}
