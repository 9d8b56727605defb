//! C ABI over the retriever: encoder, vector index, losses, reordering and
//! chunking.
//!
//! Every fallible function returns an [`RlStatus`]; on failure the message
//! is available from [`rl_last_error`] on the same thread until the next
//! call. Objects are opaque handles released with their `_free` function.
//! Panics are caught at the boundary and reported as `RL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use relabel::data::{chunk_document, ChunkingPolicy, Document, EvidenceChunk, SupportLevel};
use relabel::encoder::{
    load_checkpoint, save_checkpoint, similarity, EmbeddingVector, EncoderConfig, EncoderParams, Side,
};
use relabel::index::VectorIndex;
use relabel::inference::reorder;
use relabel::training::{list_loss, pair_loss};
use relabel::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Config = 5,
    Budget = 6,
    Numeric = 7,
    Internal = 8,
    Panic = 9,
}

/// Query or document tower of the encoder.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlSide {
    Query = 0,
    Document = 1,
}

pub struct RlEncoder {
    params: EncoderParams,
}

pub struct RlIndex {
    index: VectorIndex,
}

pub struct RlResults {
    ids: Vec<CString>,
    scores: Vec<f64>,
}

pub struct RlChunks {
    chunks: Vec<EvidenceChunk>,
    texts: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RlStatus {
    match e {
        Error::Io { .. } => RlStatus::Io,
        Error::Malformed { .. }
        | Error::DuplicateId(_)
        | Error::InvalidData(_)
        | Error::Checkpoint(_)
        | Error::NoChunks
        | Error::NoEvidence
        | Error::Transport { .. } => RlStatus::Data,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => RlStatus::InvalidArgument,
        Error::Config(_) => RlStatus::Config,
        Error::BudgetExhausted { .. } => RlStatus::Budget,
        Error::DegenerateEmbedding(_) | Error::NonFinite { .. } => RlStatus::Numeric,
        Error::Invariant(_) => RlStatus::Internal,
    }
}

struct Fail(RlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RlStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(RlStatus::InvalidArgument, msg.into())
}

/// Runs `f`, turning errors and panics into a status and the thread's last
/// error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            RlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn side(s: RlSide) -> Side {
    match s {
        RlSide::Query => Side::Query,
        RlSide::Document => Side::Document,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn rl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Randomly initialized encoder.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_encoder_new(
    feature_dim: usize,
    dim: usize,
    shared: bool,
    seed: u64,
    out: *mut *mut RlEncoder,
) -> RlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if feature_dim == 0 || dim == 0 {
            return Err(invalid("feature_dim and dim must be positive"));
        }
        let params = EncoderParams::random(EncoderConfig { feature_dim, dim, shared }, seed)?;
        *out = Box::into_raw(Box::new(RlEncoder { params }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_encoder_load(path: *const c_char, out: *mut *mut RlEncoder) -> RlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let params = load_checkpoint(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(RlEncoder { params }));
        Ok(())
    })
}

/// # Safety
/// `encoder` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rl_encoder_save(encoder: *const RlEncoder, path: *const c_char) -> RlStatus {
    guard(|| {
        let enc = handle(encoder, "encoder")?;
        save_checkpoint(&enc.params, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `encoder` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn rl_encoder_dim(encoder: *const RlEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.params.dim())
}

/// Writes the unit embedding of `text` into `out`, which holds `len` values;
/// `len` must equal the encoder dimension.
///
/// # Safety
/// `encoder` must come from this library, `text` must be NUL-terminated and
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rl_encoder_encode(
    encoder: *const RlEncoder,
    text: *const c_char,
    which: RlSide,
    out: *mut f64,
    len: usize,
) -> RlStatus {
    guard(|| {
        let enc = handle(encoder, "encoder")?;
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != enc.params.dim() {
            return Err(invalid(format!("buffer holds {len} values, encoder dim is {}", enc.params.dim())));
        }
        let v = enc.params.encode(text, side(which))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// # Safety
/// `encoder` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn rl_encoder_free(encoder: *mut RlEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

fn unit(values: &[f64]) -> Result<EmbeddingVector, Fail> {
    Ok(EmbeddingVector::normalize(values.to_vec())?)
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rl_similarity(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> RlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if len == 0 {
            return Err(invalid("empty vectors"));
        }
        let a = unit(slice_arg(a, len, "a")?)?;
        let b = unit(slice_arg(b, len, "b")?)?;
        *out = similarity(&a, &b);
        Ok(())
    })
}

/// Embeds `n` documents with the document tower and indexes them.
///
/// # Safety
/// `ids` and `texts` must each point to `n` NUL-terminated strings; `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn rl_index_build(
    encoder: *const RlEncoder,
    ids: *const *const c_char,
    texts: *const *const c_char,
    n: usize,
    out: *mut *mut RlIndex,
) -> RlStatus {
    guard(|| {
        let enc = handle(encoder, "encoder")?;
        let out = out_arg(out, "out")?;
        let ids = slice_arg(ids, n, "ids")?;
        let texts = slice_arg(texts, n, "texts")?;
        let mut rows = Vec::with_capacity(n);
        for (&id, &text) in ids.iter().zip(texts) {
            let id = str_arg(id, "id")?;
            let v = enc.params.encode(str_arg(text, "text")?, Side::Document)?;
            rows.push((id.to_owned(), v));
        }
        let index = VectorIndex::build(rows, enc.params.fingerprint())?;
        *out = Box::into_raw(Box::new(RlIndex { index }));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rl_index_load(path: *const c_char, out: *mut *mut RlIndex) -> RlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let index = VectorIndex::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(RlIndex { index }));
        Ok(())
    })
}

/// # Safety
/// `index` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rl_index_save(index: *const RlIndex, path: *const c_char) -> RlStatus {
    guard(|| {
        let idx = handle(index, "index")?;
        idx.index.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Number of indexed entries, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn rl_index_len(index: *const RlIndex) -> usize {
    index.as_ref().map_or(0, |i| i.index.len())
}

/// Top `k` entries by cosine with `query` (normalized first). Ties go to the
/// smaller id.
///
/// # Safety
/// `query` must point to `len` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rl_index_search(
    index: *const RlIndex,
    query: *const f64,
    len: usize,
    k: usize,
    out: *mut *mut RlResults,
) -> RlStatus {
    guard(|| {
        let idx = handle(index, "index")?;
        let out = out_arg(out, "out")?;
        let q = unit(slice_arg(query, len, "query")?)?;
        let result = idx.index.search("q", &q, k)?;
        let mut ids = Vec::with_capacity(result.hits.len());
        let mut scores = Vec::with_capacity(result.hits.len());
        for h in result.hits {
            ids.push(CString::new(h.id).map_err(|_| invalid("id contains NUL"))?);
            scores.push(h.score);
        }
        *out = Box::into_raw(Box::new(RlResults { ids, scores }));
        Ok(())
    })
}

/// # Safety
/// `index` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn rl_index_free(index: *mut RlIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// # Safety
/// `results` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn rl_results_len(results: *const RlResults) -> usize {
    results.as_ref().map_or(0, |r| r.ids.len())
}

/// Id of hit `i`, owned by `results`; null when out of range.
///
/// # Safety
/// `results` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn rl_results_id(results: *const RlResults, i: usize) -> *const c_char {
    results
        .as_ref()
        .and_then(|r| r.ids.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Score of hit `i`; NaN when out of range.
///
/// # Safety
/// `results` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn rl_results_score(results: *const RlResults, i: usize) -> f64 {
    results
        .as_ref()
        .and_then(|r| r.scores.get(i))
        .copied()
        .unwrap_or(f64::NAN)
}

/// # Safety
/// `results` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn rl_results_free(results: *mut RlResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// Softmax cross-entropy of the positive at temperature `tau`.
///
/// # Safety
/// `scores` must point to `n` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rl_list_loss(
    scores: *const f64,
    n: usize,
    positive: usize,
    tau: f64,
    out: *mut f64,
) -> RlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = list_loss(slice_arg(scores, n, "scores")?, positive, tau)?;
        Ok(())
    })
}

/// Pairwise logistic loss over every pair with a strictly higher label.
/// Labels are support values: 1, 0.5 or 0.
///
/// # Safety
/// `labels` and `scores` must point to `n` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rl_pair_loss(labels: *const f64, scores: *const f64, n: usize, out: *mut f64) -> RlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let labels = slice_arg(labels, n, "labels")?
            .iter()
            .map(|&v| SupportLevel::from_value(v).ok_or_else(|| invalid(format!("{v} is not a support value"))))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = slice_arg(scores, n, "scores")?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Fail(RlStatus::Numeric, "non-finite score".into()));
        }
        *out = pair_loss(&labels, scores, None);
        Ok(())
    })
}

/// Middle-rank order of `k` passages given by relevance rank: writes the
/// 0-based rank placed at each position into `order`, which holds `k`
/// values. `j` is the head and tail size.
///
/// # Safety
/// `order` must point to `k` writable values.
#[no_mangle]
pub unsafe extern "C" fn rl_reorder(k: usize, j: usize, order: *mut usize) -> RlStatus {
    guard(|| {
        if order.is_null() {
            return Err(null("order"));
        }
        let ranks: Vec<usize> = (0..k).collect();
        let r = reorder(&ranks, j)?;
        std::slice::from_raw_parts_mut(order, k).copy_from_slice(&r.order);
        Ok(())
    })
}

/// Splits `text` into sentence-aligned chunks of at most `max_words` words
/// and `max_sentences` sentences.
///
/// # Safety
/// `text` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rl_chunk_document(
    text: *const c_char,
    max_words: usize,
    max_sentences: usize,
    out: *mut *mut RlChunks,
) -> RlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let policy = ChunkingPolicy::new(max_words, max_sentences)?;
        let doc = Document::new("doc", str_arg(text, "text")?);
        let chunks = chunk_document(&doc, &policy);
        let texts = chunks
            .iter()
            .map(|c| CString::new(c.text.as_str()).map_err(|_| invalid("text contains NUL")))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(RlChunks { chunks, texts }));
        Ok(())
    })
}

/// # Safety
/// `chunks` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn rl_chunks_len(chunks: *const RlChunks) -> usize {
    chunks.as_ref().map_or(0, |c| c.chunks.len())
}

/// Byte range of chunk `i` in the original text.
///
/// # Safety
/// `chunks` must come from this library; `start` and `end` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rl_chunks_span(
    chunks: *const RlChunks,
    i: usize,
    start: *mut usize,
    end: *mut usize,
) -> RlStatus {
    guard(|| {
        let c = handle(chunks, "chunks")?;
        let chunk = c.chunks.get(i).ok_or_else(|| invalid(format!("chunk {i} out of range")))?;
        *out_arg(start, "start")? = chunk.start;
        *out_arg(end, "end")? = chunk.end;
        Ok(())
    })
}

/// Text of chunk `i`, owned by `chunks`; null when out of range.
///
/// # Safety
/// `chunks` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn rl_chunks_text(chunks: *const RlChunks, i: usize) -> *const c_char {
    chunks
        .as_ref()
        .and_then(|c| c.texts.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `chunks` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn rl_chunks_free(chunks: *mut RlChunks) {
    if !chunks.is_null() {
        drop(Box::from_raw(chunks));
    }
}
