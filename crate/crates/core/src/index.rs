//! Exact cosine-similarity index with a contiguous row-major score layout.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{dot, EmbeddingVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RLINDEX\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f64>,
    checkpoint_hash: String,
    built_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Ranked hits for one query: scores non-increasing, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub k: usize,
    pub hits: Vec<Hit>,
}

fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl VectorIndex {
    /// Builds an index from unit vectors. `checkpoint_hash` identifies the
    /// encoder that produced them.
    pub fn build(
        entries: impl IntoIterator<Item = (String, EmbeddingVector)>,
        checkpoint_hash: String,
    ) -> Result<Self> {
        let mut dim = None;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (id, v) in entries {
            let d = *dim.get_or_insert(v.dim());
            if v.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.dim(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            rows.extend_from_slice(v.as_slice());
        }
        Ok(VectorIndex {
            dim: dim.unwrap_or(0),
            ids,
            rows,
            checkpoint_hash,
            built_at: 0,
        })
    }

    pub fn with_build_time(mut self, unix_seconds: u64) -> Self {
        self.built_at = unix_seconds;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.checkpoint_hash
    }

    pub fn built_at(&self) -> u64 {
        self.built_at
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn search(&self, query_id: &str, query: &EmbeddingVector, k: usize) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Ok(RetrievalResult {
                query_id: query_id.to_owned(),
                k,
                hits: Vec::new(),
            });
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, &str)> = self
            .rows
            .chunks_exact(self.dim)
            .zip(&self.ids)
            .map(|(row, id)| (dot(q, row), id.as_str()))
            .collect();
        let k_eff = k.min(scored.len());
        if k_eff < scored.len() {
            scored.select_nth_unstable_by(k_eff - 1, rank_order);
            scored.truncate(k_eff);
        }
        scored.sort_by(rank_order);
        Ok(RetrievalResult {
            query_id: query_id.to_owned(),
            k,
            hits: scored
                .into_iter()
                .map(|(score, id)| Hit {
                    id: id.to_owned(),
                    score,
                })
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(64 + self.rows.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.built_at.to_le_bytes());
        put_str(&mut out, &self.checkpoint_hash);
        for (id, row) in self.ids.iter().zip(self.rows.chunks_exact(self.dim.max(1))) {
            put_str(&mut out, id);
            for x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader { bytes: &bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::InvalidData(format!("{} is not an index file", path.display())));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::InvalidData(format!("unsupported index version {version}")));
        }
        let dim = r.u64()? as usize;
        let n = r.u64()? as usize;
        let built_at = r.u64()?;
        let checkpoint_hash = r.string()?;
        let mut ids = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n * dim);
        for _ in 0..n {
            ids.push(r.string()?);
            for _ in 0..dim {
                rows.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
        }
        if r.at != bytes.len() {
            return Err(Error::InvalidData("trailing bytes in index file".into()));
        }
        Ok(VectorIndex {
            dim,
            ids,
            rows,
            checkpoint_hash,
            built_at,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::InvalidData("truncated index file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::InvalidData("non-UTF-8 string in index file".into()))
    }
}

/// Fraction of results whose top `k` hits contain at least one gold id.
/// Queries without gold ids count as misses.
pub fn recall_at_k(
    results: &[RetrievalResult],
    gold: &BTreeMap<String, Vec<String>>,
    k: usize,
) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .filter(|r| {
            gold.get(&r.query_id).is_some_and(|g| {
                r.hits.iter().take(k).any(|h| g.iter().any(|id| id == &h.id))
            })
        })
        .count();
    hits as f64 / results.len() as f64
}

/// Span-mode recall: a query is a hit when any of its answers occurs,
/// case-insensitively, in the text of one of its top `k` hits.
pub fn span_recall_at_k(
    results: &[RetrievalResult],
    answers: &BTreeMap<String, Vec<String>>,
    text_of: &dyn Fn(&str) -> Option<String>,
    k: usize,
) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .filter(|r| {
            let Some(ans) = answers.get(&r.query_id) else {
                return false;
            };
            let ans: Vec<String> = ans.iter().map(|a| a.to_lowercase()).filter(|a| !a.is_empty()).collect();
            r.hits.iter().take(k).any(|h| {
                text_of(&h.id).is_some_and(|t| {
                    let t = t.to_lowercase();
                    ans.iter().any(|a| t.contains(a.as_str()))
                })
            })
        })
        .count();
    hits as f64 / results.len() as f64
}
