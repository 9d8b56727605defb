//! Tokenization helpers shared by the mock oracle, the entity masker and the
//! hashed feature encoder.

use std::collections::BTreeSet;
use std::hash::Hasher;

use fnv::FnvHasher;

/// Function words ignored when measuring content overlap.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "been", "before", "being", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "during", "each", "for", "from", "had", "has", "have", "having", "he",
    "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "many", "me", "more", "most", "much", "my", "near", "no", "nor", "not", "of",
    "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over", "own", "same",
    "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "then", "there", "these", "they", "this", "those", "through", "to", "too", "under",
    "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "whom", "whose", "why", "will", "with", "would", "yes", "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercased alphanumeric runs; every other character separates tokens.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct non-stopword tokens.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    normalized_tokens(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect()
}

/// Stable 64-bit FNV-1a hash; identical on every platform and build.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = FnvHasher::default();
    for part in parts {
        hasher.write(part);
        hasher.write_u8(0xff);
    }
    hasher.finish()
}

/// Derives an independent seed for a named consumer of a global seed.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), name.as_bytes()])
}
