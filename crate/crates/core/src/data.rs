//! Corpus, relevance tuples, evidence chunks and their JSONL encodings.
//!
//! Corpus lines look like `{"id": .., "title": .., "text": .., "source": ..}` and
//! tuple lines like `{"question": .., "doc_id": .., "evidence": {"start", "end",
//! "text"}, "support": 0|0.5|1, "provenance": ..}`. Writers append a `"schema"`
//! field; readers accept lines without it and reject unknown versions.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Wiki,
    Msmarco,
    Synthetic,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    pub source: Source,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            title: String::new(),
            text: text.into(),
            source: Source::Other,
        }
    }

    /// Chunk covering `range` of this document's text.
    pub fn chunk(&self, range: Range<usize>) -> Result<EvidenceChunk> {
        EvidenceChunk::from_document(self, range.start, range.end)
    }
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for doc in docs {
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, doc: Document) -> Result<()> {
        if doc.text.is_empty() {
            return Err(Error::InvalidData(format!(
                "document {:?} has empty text",
                doc.id
            )));
        }
        if self.by_id.contains_key(&doc.id) {
            return Err(Error::DuplicateId(doc.id));
        }
        self.by_id.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }
}

/// A contiguous span of a document's text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EvidenceChunk {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl EvidenceChunk {
    pub fn from_document(doc: &Document, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > doc.text.len() {
            return Err(Error::InvalidArgument(format!(
                "span {start}..{end} outside document {:?} of length {}",
                doc.id,
                doc.text.len()
            )));
        }
        let text = doc.text.get(start..end).ok_or_else(|| {
            Error::InvalidArgument(format!("span {start}..{end} is not on a char boundary"))
        })?;
        Ok(EvidenceChunk {
            doc_id: doc.id.clone(),
            start,
            end,
            text: text.to_owned(),
        })
    }

    /// Checks the span against the document it claims to come from.
    pub fn validate_against(&self, doc: &Document) -> Result<()> {
        if self.doc_id != doc.id {
            return Err(Error::InvalidData(format!(
                "chunk belongs to {:?}, not {:?}",
                self.doc_id, doc.id
            )));
        }
        match doc.text.get(self.start..self.end) {
            Some(slice) if self.start < self.end && slice == self.text => Ok(()),
            _ => Err(Error::InvalidData(format!(
                "chunk {}..{} does not match document {:?}",
                self.start, self.end, doc.id
            ))),
        }
    }
}

/// Graded usefulness of evidence for a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SupportLevel {
    No,
    Partial,
    Full,
}

impl SupportLevel {
    pub fn value(self) -> f64 {
        match self {
            SupportLevel::No => 0.0,
            SupportLevel::Partial => 0.5,
            SupportLevel::Full => 1.0,
        }
    }

    pub fn from_value(value: f64) -> Option<Self> {
        if value == 0.0 {
            Some(SupportLevel::No)
        } else if value == 0.5 {
            Some(SupportLevel::Partial)
        } else if value == 1.0 {
            Some(SupportLevel::Full)
        } else {
            None
        }
    }
}

impl fmt::Display for SupportLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SupportLevel::No => "no support",
            SupportLevel::Partial => "partial support",
            SupportLevel::Full => "full support",
        })
    }
}

impl Serialize for SupportLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            SupportLevel::No => serializer.serialize_u8(0),
            SupportLevel::Partial => serializer.serialize_f64(0.5),
            SupportLevel::Full => serializer.serialize_u8(1),
        }
    }
}

impl<'de> Deserialize<'de> for SupportLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        SupportLevel::from_value(value)
            .ok_or_else(|| de::Error::custom(format!("support must be 0, 0.5 or 1, got {value}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Benchmark,
    Generated,
    SelfLabeled,
    OracleLabeled,
}

/// One unit of relevance supervision: question, document, evidence, support.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub question: String,
    pub doc_id: String,
    pub evidence: EvidenceChunk,
    pub support: SupportLevel,
    pub provenance: Provenance,
}

impl TrainingTuple {
    pub fn new(
        question: impl Into<String>,
        evidence: EvidenceChunk,
        support: SupportLevel,
        provenance: Provenance,
    ) -> Result<Self> {
        let question = question.into();
        if question.trim().is_empty() {
            return Err(Error::InvalidData("tuple question is empty".into()));
        }
        Ok(TrainingTuple {
            question,
            doc_id: evidence.doc_id.clone(),
            evidence,
            support,
            provenance,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    start: usize,
    end: usize,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct TupleRecord {
    question: String,
    doc_id: String,
    evidence: SpanRecord,
    support: SupportLevel,
    provenance: Provenance,
    #[serde(default = "default_schema")]
    schema: u32,
}

#[derive(Serialize)]
struct DocumentRecordRef<'a> {
    id: &'a str,
    title: &'a str,
    text: &'a str,
    source: Source,
    schema: u32,
}

#[derive(Deserialize)]
struct DocumentRecord {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
    source: Source,
    #[serde(default = "default_schema")]
    schema: u32,
}

impl From<&TrainingTuple> for TupleRecord {
    fn from(t: &TrainingTuple) -> Self {
        TupleRecord {
            question: t.question.clone(),
            doc_id: t.doc_id.clone(),
            evidence: SpanRecord {
                start: t.evidence.start,
                end: t.evidence.end,
                text: t.evidence.text.clone(),
            },
            support: t.support,
            provenance: t.provenance,
            schema: SCHEMA_VERSION,
        }
    }
}

impl TryFrom<TupleRecord> for TrainingTuple {
    type Error = String;

    fn try_from(r: TupleRecord) -> std::result::Result<Self, String> {
        if r.schema != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", r.schema));
        }
        if r.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if r.evidence.start >= r.evidence.end
            || r.evidence.end - r.evidence.start != r.evidence.text.len()
        {
            return Err(format!(
                "evidence span {}..{} inconsistent with its text",
                r.evidence.start, r.evidence.end
            ));
        }
        Ok(TrainingTuple {
            question: r.question,
            evidence: EvidenceChunk {
                doc_id: r.doc_id.clone(),
                start: r.evidence.start,
                end: r.evidence.end,
                text: r.evidence.text,
            },
            doc_id: r.doc_id,
            support: r.support,
            provenance: r.provenance,
        })
    }
}

/// Reads a JSONL file, calling `parse` on every non-blank line (1-based numbers).
pub fn read_jsonl<T>(
    path: &Path,
    mut parse: impl FnMut(&str, usize) -> Result<T>,
) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line, i + 1)?);
    }
    Ok(out)
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn malformed(line: usize, e: impl fmt::Display) -> Error {
    Error::Malformed {
        line,
        message: e.to_string(),
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let records = read_jsonl(path, |line, n| {
        let r: DocumentRecord = serde_json::from_str(line).map_err(|e| malformed(n, e))?;
        if r.schema != SCHEMA_VERSION {
            return Err(malformed(n, format!("unsupported schema version {}", r.schema)));
        }
        if r.text.is_empty() {
            return Err(malformed(n, format!("document {:?} has empty text", r.id)));
        }
        Ok(Document {
            id: r.id,
            title: r.title,
            text: r.text,
            source: r.source,
        })
    })?;
    Corpus::new(records)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_jsonl(
        path,
        corpus.iter().map(|d| DocumentRecordRef {
            id: &d.id,
            title: &d.title,
            text: &d.text,
            source: d.source,
            schema: SCHEMA_VERSION,
        }),
    )
}

pub fn load_tuples(path: &Path) -> Result<Vec<TrainingTuple>> {
    read_jsonl(path, |line, n| {
        let r: TupleRecord = serde_json::from_str(line).map_err(|e| malformed(n, e))?;
        TrainingTuple::try_from(r).map_err(|e| malformed(n, e))
    })
}

pub fn save_tuples(tuples: &[TrainingTuple], path: &Path) -> Result<()> {
    write_jsonl(path, tuples.iter().map(TupleRecord::from))
}

/// Size limits for evidence chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingPolicy {
    pub max_words: usize,
    pub max_sentences: usize,
}

impl Default for ChunkingPolicy {
    fn default() -> Self {
        ChunkingPolicy {
            max_words: 50,
            max_sentences: 3,
        }
    }
}

impl ChunkingPolicy {
    pub fn new(max_words: usize, max_sentences: usize) -> Result<Self> {
        let policy = ChunkingPolicy {
            max_words,
            max_sentences,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_words == 0 || self.max_sentences == 0 {
            return Err(Error::InvalidArgument(
                "chunking limits must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Splits text into trimmed sentence byte ranges that cover every
/// non-whitespace character, in order.
pub trait SentenceSplitter {
    fn split(&self, text: &str) -> Vec<Range<usize>>;
}

/// Ends a sentence at `.`, `?` or `!` followed by whitespace and an uppercase letter.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSentenceSplitter;

impl SentenceSplitter for RuleSentenceSplitter {
    fn split(&self, text: &str) -> Vec<Range<usize>> {
        let mut cuts = Vec::new();
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        for (i, &(pos, c)) in chars.iter().enumerate() {
            if !matches!(c, '.' | '?' | '!') {
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j].1.is_uppercase() {
                cuts.push(pos + c.len_utf8());
            }
        }
        cuts.push(text.len());

        let mut out = Vec::with_capacity(cuts.len());
        let mut start = 0;
        for cut in cuts {
            if let Some(range) = trim_range(text, start..cut) {
                out.push(range);
            }
            start = cut;
        }
        out
    }
}

fn trim_range(text: &str, range: Range<usize>) -> Option<Range<usize>> {
    let slice = &text[range.clone()];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        None
    } else {
        let start = range.start + lead;
        Some(start..start + trimmed.len())
    }
}

/// Byte ranges of whitespace-delimited words inside `range`.
fn word_ranges(text: &str, range: Range<usize>) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text[range.clone()].char_indices() {
        let pos = range.start + i;
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(s..pos);
                start = None;
            }
            (false, None) => start = Some(pos),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..range.end);
    }
    out
}

pub fn chunk_document(doc: &Document, policy: &ChunkingPolicy) -> Vec<EvidenceChunk> {
    chunk_document_with(doc, policy, &RuleSentenceSplitter)
}

/// Greedy left-to-right packing of sentences into chunks. A sentence longer
/// than `max_words` is cut at word boundaries first.
pub fn chunk_document_with(
    doc: &Document,
    policy: &ChunkingPolicy,
    splitter: &dyn SentenceSplitter,
) -> Vec<EvidenceChunk> {
    let max_words = policy.max_words.max(1);
    let max_sentences = policy.max_sentences.max(1);
    let text = doc.text.as_str();

    // (range, word count) units, each counted as one sentence
    let mut units: Vec<(Range<usize>, usize)> = Vec::new();
    for sentence in splitter.split(text) {
        let words = word_ranges(text, sentence.clone());
        if words.len() <= max_words {
            units.push((sentence, words.len()));
        } else {
            for piece in words.chunks(max_words) {
                units.push((piece[0].start..piece[piece.len() - 1].end, piece.len()));
            }
        }
    }

    let mut chunks = Vec::new();
    let mut current: Option<(Range<usize>, usize, usize)> = None;
    for (range, words) in units {
        current = match current {
            Some((open, w, s)) if w + words <= max_words && s < max_sentences => {
                Some((open.start..range.end, w + words, s + 1))
            }
            Some((open, _, _)) => {
                chunks.push(open);
                Some((range, words, 1))
            }
            None => Some((range, words, 1)),
        };
    }
    if let Some((open, _, _)) = current {
        chunks.push(open);
    }

    chunks
        .into_iter()
        .map(|r| EvidenceChunk {
            doc_id: doc.id.clone(),
            text: text[r.clone()].to_owned(),
            start: r.start,
            end: r.end,
        })
        .collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
