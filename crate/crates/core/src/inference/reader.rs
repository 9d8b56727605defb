use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::ChatTransport;
use crate::text::{normalized_tokens, stable_hash};

/// Scores candidate answers given a question and an ordered context.
pub trait Reader: Send + Sync {
    /// One finite, non-negative likelihood per candidate.
    fn score_answers(&self, question: &str, context: &[&str], candidates: &[String]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockReaderConfig {
    pub base: f64,
    pub bonus: f64,
    /// Halve the weight of passages in the middle third of the context.
    pub position_biased: bool,
    /// Upper bound of the seeded uniform noise added to each likelihood.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for MockReaderConfig {
    fn default() -> Self {
        MockReaderConfig {
            base: 0.01,
            bonus: 1.0,
            position_biased: false,
            jitter: 0.0,
            seed: 0,
        }
    }
}

/// Rewards candidates that occur in the context, optionally discounting
/// occurrences in the middle of it.
#[derive(Debug, Clone, Default)]
pub struct MockReader {
    pub cfg: MockReaderConfig,
}

pub const MIDDLE_WEIGHT: f64 = 0.5;

impl MockReader {
    pub fn new(cfg: MockReaderConfig) -> Self {
        MockReader { cfg }
    }

    pub fn position_agnostic() -> Self {
        MockReader::default()
    }

    pub fn position_biased() -> Self {
        MockReader::new(MockReaderConfig {
            position_biased: true,
            ..Default::default()
        })
    }

    /// Weight of the passage at `pos` in a context of `n` passages.
    pub fn weight(&self, pos: usize, n: usize) -> f64 {
        if !self.cfg.position_biased {
            return 1.0;
        }
        let bucket = (n / 3).max(1);
        if pos < bucket || pos >= n.saturating_sub(bucket) {
            1.0
        } else {
            MIDDLE_WEIGHT
        }
    }
}

/// Occurrences of `needle`'s token sequence in `haystack`'s tokens.
pub fn token_occurrences(needle: &str, haystack: &str) -> usize {
    let n = normalized_tokens(needle);
    if n.is_empty() {
        return 0;
    }
    normalized_tokens(haystack)
        .windows(n.len())
        .filter(|w| *w == n.as_slice())
        .count()
}

impl Reader for MockReader {
    fn score_answers(&self, question: &str, context: &[&str], candidates: &[String]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|c| {
                let hits: f64 = context
                    .iter()
                    .enumerate()
                    .map(|(pos, p)| self.weight(pos, context.len()) * token_occurrences(c, p) as f64)
                    .sum();
                let mut score = self.cfg.base + self.cfg.bonus * hits;
                if self.cfg.jitter > 0.0 {
                    let mut parts: Vec<&[u8]> = vec![question.as_bytes(), c.as_bytes()];
                    parts.extend(context.iter().map(|p| p.as_bytes()));
                    let seed = self.cfg.seed.wrapping_add(stable_hash(&parts));
                    score += ChaCha8Rng::seed_from_u64(seed).random::<f64>() * self.cfg.jitter;
                }
                score
            })
            .collect())
    }
}

/// Reader backed by a chat-completion model asked for one probability per
/// candidate.
pub struct LlmReader {
    transport: ChatTransport,
}

impl LlmReader {
    pub fn new(transport: ChatTransport) -> Self {
        LlmReader { transport }
    }
}

pub fn reader_prompt(question: &str, context: &[&str], candidates: &[String]) -> String {
    let mut p = String::from("Answer the question using the passages below.\n\nPassages:\n");
    for (i, c) in context.iter().enumerate() {
        let _ = writeln!(p, "[{}] {}", i + 1, c);
    }
    let _ = write!(p, "\nQuestion: {question}\n\nCandidate answers:\n");
    for (i, c) in candidates.iter().enumerate() {
        let _ = writeln!(p, "{}. {}", i + 1, c);
    }
    p.push_str(
        "\nFor each candidate, in order, reply with one line holding only the probability (0 to 1) that it is the correct answer.\n",
    );
    p
}

/// Last number on each line that has one.
pub fn parse_likelihoods(reply: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = reply
        .lines()
        .filter_map(|l| {
            l.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == 'e'))
                .filter_map(|t| t.parse::<f64>().ok())
                .rfind(|v| v.is_finite())
        })
        .collect();
    if values.len() < expected {
        return Err(Error::Transport {
            retryable: false,
            message: format!("reader returned {} scores for {expected} candidates", values.len()),
        });
    }
    Ok(values.into_iter().take(expected).map(|v| v.max(0.0)).collect())
}

impl Reader for LlmReader {
    fn score_answers(&self, question: &str, context: &[&str], candidates: &[String]) -> Result<Vec<f64>> {
        let reply = self.transport.chat(&reader_prompt(question, context, candidates))?;
        parse_likelihoods(&reply, candidates.len())
    }
}
