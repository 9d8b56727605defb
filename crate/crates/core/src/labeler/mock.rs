use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GeneratedQuestion, LabelerOracle, OracleMeter, OracleUsage};
use crate::data::{chunk_document, ChunkingPolicy, Document, EvidenceChunk, SupportLevel};
use crate::error::{Error, Result};
use crate::text::{content_tokens, is_stopword, normalized_tokens, stable_hash};

/// Words the mock's question template adds; never counted as content.
pub const MOCK_TEMPLATE_WORDS: &[&str] = &["regarding", "said"];

const WH_WORDS: &[&str] = &["how", "what", "when", "where", "which", "who", "why"];

/// Deterministic stand-in for an LLM labeler based on content-token overlap.
///
/// Support is the share of the question's content tokens found in the
/// evidence: at least 0.8 is full support, at least 0.4 partial, else none.
#[derive(Debug)]
pub struct MockOracle {
    seed: u64,
    chunking: ChunkingPolicy,
    meter: OracleMeter,
}

impl MockOracle {
    pub fn new(seed: u64, chunking: ChunkingPolicy) -> Self {
        MockOracle {
            seed,
            chunking,
            meter: OracleMeter::default(),
        }
    }

    pub fn with_budget(mut self, max_calls: Option<u64>, cost_per_call: f64) -> Self {
        self.meter = OracleMeter::new(max_calls, cost_per_call);
        self
    }

    fn question_tokens(question: &str) -> Vec<String> {
        content_tokens(question)
            .into_iter()
            .filter(|t| !MOCK_TEMPLATE_WORDS.contains(&t.as_str()))
            .collect()
    }

    /// Share of the question's content tokens present in `text`.
    pub fn overlap_ratio(question: &str, text: &str) -> f64 {
        let q = Self::question_tokens(question);
        if q.is_empty() {
            return 0.0;
        }
        let have: std::collections::HashSet<String> = normalized_tokens(text).into_iter().collect();
        q.iter().filter(|t| have.contains(*t)).count() as f64 / q.len() as f64
    }

    pub fn label_for(ratio: f64) -> SupportLevel {
        if ratio >= 0.8 {
            SupportLevel::Full
        } else if ratio >= 0.4 {
            SupportLevel::Partial
        } else {
            SupportLevel::No
        }
    }

    fn chunks(&self, doc: &Document) -> Result<Vec<EvidenceChunk>> {
        let chunks = chunk_document(doc, &self.chunking);
        if chunks.is_empty() {
            return Err(Error::NoChunks);
        }
        Ok(chunks)
    }
}

fn entity_of(text: &str) -> Option<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .find(|w| {
            w.chars().next().is_some_and(char::is_uppercase)
                && !is_stopword(&w.to_lowercase())
                && w.chars().all(char::is_alphanumeric)
        })
        .map(str::to_owned)
}

fn wh_word(demonstrations: &[String]) -> String {
    demonstrations
        .first()
        .and_then(|d| d.split_whitespace().next())
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| WH_WORDS.contains(&w.to_lowercase().as_str()))
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c.flat_map(char::to_lowercase)).collect())
                .unwrap_or_default()
        })
        .unwrap_or_else(|| "What".to_owned())
}

impl LabelerOracle for MockOracle {
    fn generate_question(&self, doc: &Document, demonstrations: &[String]) -> Result<GeneratedQuestion> {
        self.meter.begin_call()?;
        let chunks = self.chunks(doc)?;
        let mut best = 0;
        let mut best_n = 0;
        for (i, c) in chunks.iter().enumerate() {
            let n = content_tokens(&c.text).len();
            if n > best_n {
                best = i;
                best_n = n;
            }
        }
        let evidence = chunks[best].clone();
        let entity = entity_of(&evidence.text)
            .or_else(|| content_tokens(&evidence.text).into_iter().next())
            .unwrap_or_else(|| "this passage".to_owned());
        let entity_key = entity.to_lowercase();
        let rest: Vec<String> = content_tokens(&evidence.text)
            .into_iter()
            .filter(|t| *t != entity_key && !MOCK_TEMPLATE_WORDS.contains(&t.as_str()))
            .collect();

        let seed_bytes = self.seed.to_le_bytes();
        let mut parts: Vec<&[u8]> = vec![&seed_bytes, doc.id.as_bytes(), doc.text.as_bytes()];
        parts.extend(demonstrations.iter().map(|d| d.as_bytes()));
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&parts));
        let picks = rand::seq::index::sample(&mut rng, rest.len(), rest.len().min(2));
        let topic: Vec<&str> = picks.iter().map(|i| rest[i].as_str()).collect();

        let wh = wh_word(demonstrations);
        let question = if topic.is_empty() {
            format!("{wh} is said about {entity}?")
        } else {
            format!("{wh} is said about {entity} regarding {}?", topic.join(" "))
        };
        Ok(GeneratedQuestion { question, evidence })
    }

    fn identify_evidence(&self, question: &str, doc: &Document) -> Result<(EvidenceChunk, SupportLevel)> {
        self.meter.begin_call()?;
        let chunks = self.chunks(doc)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in chunks.iter().enumerate() {
            let r = Self::overlap_ratio(question, &c.text);
            if r > best.1 {
                best = (i, r);
            }
        }
        Ok((chunks[best.0].clone(), Self::label_for(best.1)))
    }

    fn score_evidence(&self, question: &str, evidence: &EvidenceChunk) -> Result<SupportLevel> {
        self.meter.begin_call()?;
        Ok(Self::label_for(Self::overlap_ratio(question, &evidence.text)))
    }

    fn usage(&self) -> OracleUsage {
        self.meter.usage()
    }
}
