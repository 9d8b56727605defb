//! Entity masking and k-means clustering of questions, used to pick diverse
//! demonstrations and to group questions for adaptive labeling.

use std::cmp::Ordering;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::write_jsonl;
use crate::encoder::{EmbeddingVector, HashedTextEmbedder, TextEmbedder};
use crate::error::{Error, Result};
use crate::text::{is_stopword, substream_seed};

pub const MASK_TOKEN: &str = "[ENT]";

/// Imperative openers kept when they start a sentence.
const QUESTION_VERBS: &[&str] = &["define", "describe", "explain", "give", "identify", "list", "name", "tell"];

const ISODATA_ROUNDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedQuestion {
    pub original: String,
    pub masked: String,
    pub mask_count: usize,
}

enum Segment<'a> {
    Word(&'a str),
    Mask,
    Sep(&'a str),
}

fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with(MASK_TOKEN) {
            out.push(Segment::Mask);
            i += MASK_TOKEN.len();
            continue;
        }
        let first = rest.chars().next().expect("non-empty");
        let word = first.is_alphanumeric();
        let mut end = 0;
        for (off, c) in rest.char_indices() {
            if c.is_alphanumeric() != word || (!word && rest[off..].starts_with(MASK_TOKEN)) {
                break;
            }
            end = off + c.len_utf8();
        }
        let piece = &rest[..end];
        out.push(if word { Segment::Word(piece) } else { Segment::Sep(piece) });
        i += end;
    }
    out
}

fn is_entity(word: &str, sentence_initial: bool) -> bool {
    let first = word.chars().next().expect("non-empty word");
    if first.is_ascii_digit() {
        return true;
    }
    if !first.is_uppercase() {
        return false;
    }
    let lower = word.to_lowercase();
    !(is_stopword(&lower) || sentence_initial && QUESTION_VERBS.contains(&lower.as_str()))
}

/// Replaces capitalized spans and numbers with `[ENT]`. Function words and
/// sentence-initial question verbs are kept even when capitalized; adjacent
/// entity tokens separated only by spaces collapse into one mask.
pub fn mask_entities(question: &str) -> MaskedQuestion {
    let mut masked = String::with_capacity(question.len());
    let mut initial = true;
    // whitespace seen right after an entity, held back in case another
    // entity follows
    let mut pending_space: Option<&str> = None;
    let mut in_entity = false;
    for seg in segments(question) {
        match seg {
            Segment::Word(w) if is_entity(w, initial) => {
                if !in_entity {
                    masked.push_str(MASK_TOKEN);
                }
                pending_space = None;
                in_entity = true;
                initial = false;
            }
            Segment::Mask => {
                if !in_entity {
                    masked.push_str(MASK_TOKEN);
                }
                pending_space = None;
                in_entity = true;
                initial = false;
            }
            Segment::Sep(s) if in_entity && pending_space.is_none() && s.chars().all(char::is_whitespace) => {
                pending_space = Some(s);
            }
            Segment::Word(w) => {
                if let Some(s) = pending_space.take() {
                    masked.push_str(s);
                }
                masked.push_str(w);
                in_entity = false;
                initial = false;
            }
            Segment::Sep(s) => {
                if let Some(p) = pending_space.take() {
                    masked.push_str(p);
                }
                masked.push_str(s);
                in_entity = false;
                if s.contains(['.', '?', '!']) {
                    initial = true;
                }
            }
        }
    }
    if let Some(s) = pending_space {
        masked.push_str(s);
    }
    let mask_count = masked.matches(MASK_TOKEN).count();
    MaskedQuestion {
        original: question.to_owned(),
        masked,
        mask_count,
    }
}

/// Embeds text with the default hashed question embedder.
pub fn embed_text(text: &str) -> Result<EmbeddingVector> {
    HashedTextEmbedder::default().embed(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Independent k-means++ starts; the lowest final objective wins.
    pub restarts: usize,
    /// Split clusters whose mean squared member distance exceeds this.
    pub split_variance_threshold: Option<f64>,
    /// Merge clusters whose centroids are closer than this.
    pub merge_distance_threshold: Option<f64>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k: 6,
            max_iters: 100,
            seed: 0,
            restarts: 8,
            split_variance_threshold: None,
            merge_distance_threshold: None,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionCluster {
    pub id: usize,
    /// Input indices, ascending.
    pub member_ids: Vec<usize>,
    pub centroid: EmbeddingVector,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringOutcome {
    pub clusters: Vec<QuestionCluster>,
    /// Cluster id of every input point.
    pub assignments: Vec<usize>,
    pub requested_k: usize,
    pub effective_k: usize,
    /// K-means objective after each Lloyd iteration of the winning start.
    pub objective_history: Vec<f64>,
    /// Set when `k` had to be lowered to the number of points.
    pub adjustment: Option<String>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Points addressed in canonical (lexicographic) order so that results do
/// not depend on input order.
struct Points<'a> {
    data: Vec<&'a [f64]>,
    order: Vec<usize>,
    dim: usize,
}

impl Points<'_> {
    fn nearest(&self, p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (c, center) in centers.iter().enumerate() {
            let d = sq_dist(p, center);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }

    fn assign(&self, centers: &[Vec<f64>]) -> Vec<usize> {
        self.data.iter().map(|p| self.nearest(p, centers).0).collect()
    }

    /// Member means in canonical summation order; empty clusters keep their
    /// previous center.
    fn update(&self, assign: &[usize], centers: &mut [Vec<f64>]) {
        let mut sums = vec![vec![0.0; self.dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for &i in &self.order {
            let c = assign[i];
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(self.data[i]) {
                *s += x;
            }
        }
        for (c, (sum, n)) in sums.into_iter().zip(counts).enumerate() {
            if n > 0 {
                centers[c] = sum.into_iter().map(|s| s / n as f64).collect();
            }
        }
    }

    fn objective(&self, assign: &[usize], centers: &[Vec<f64>]) -> f64 {
        self.order
            .iter()
            .map(|&i| sq_dist(self.data[i], &centers[assign[i]]))
            .sum()
    }

    fn seed_centers(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let n = self.order.len();
        let mut centers = vec![self.data[self.order[rng.random_range(0..n)]].to_vec()];
        while centers.len() < k {
            let weights: Vec<f64> = self
                .order
                .iter()
                .map(|&i| self.nearest(self.data[i], &centers).1)
                .collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                break;
            }
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (pos, w) in weights.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                pick = Some(pos);
                acc += w;
                if acc > target {
                    break;
                }
            }
            let pos = pick.expect("positive total weight");
            centers.push(self.data[self.order[pos]].to_vec());
        }
        centers
    }

    fn lloyd(&self, centers: &mut [Vec<f64>], max_iters: usize, history: &mut Vec<f64>) -> Vec<usize> {
        let mut assign = self.assign(centers);
        for _ in 0..max_iters.max(1) {
            self.update(&assign, centers);
            history.push(self.objective(&assign, centers));
            let next = self.assign(centers);
            if next == assign {
                break;
            }
            assign = next;
        }
        assign
    }
}

/// Lloyd's k-means with k-means++ seeding, plus optional ISODATA-style
/// split and merge rounds. Clusters with identical centroids are merged and
/// empty clusters dropped, so fewer than `k` clusters may come back.
pub fn cluster(embeddings: &[EmbeddingVector], cfg: &ClusteringConfig) -> Result<ClusteringOutcome> {
    cfg.validate()?;
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::InvalidArgument("nothing to cluster".into()));
    }
    let dim = embeddings[0].dim();
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.dim() });
    }
    let data: Vec<&[f64]> = embeddings.iter().map(|e| e.as_slice()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex_cmp(data[a], data[b]));
    let pts = Points { data, order, dim };

    let k = cfg.k.min(n);
    let adjustment = (k < cfg.k).then(|| format!("k lowered from {} to {k}, the number of points", cfg.k));
    if let Some(a) = &adjustment {
        log::info!("{a}");
    }

    type Run = (Vec<Vec<f64>>, Vec<f64>, Vec<usize>);
    let mut best: Option<Run> = None;
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, &format!("kmeans/{r}")));
        let mut centers = pts.seed_centers(k, &mut rng);
        let mut history = Vec::new();
        let assign = pts.lloyd(&mut centers, cfg.max_iters, &mut history);
        let last = history.last().copied().unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|b| last < b.1.last().copied().unwrap_or(f64::INFINITY)) {
            best = Some((centers, history, assign));
        }
    }
    let (mut centers, mut history, mut assign) = best.expect("at least one restart");

    if cfg.split_variance_threshold.is_some() || cfg.merge_distance_threshold.is_some() {
        for _ in 0..ISODATA_ROUNDS {
            let mut changed = false;
            if let Some(t) = cfg.merge_distance_threshold {
                changed |= merge_closest(&assign, &mut centers, t * t);
            }
            if let Some(v) = cfg.split_variance_threshold {
                changed |= split_widest(&pts, &assign, &mut centers, v, 2 * cfg.k);
            }
            if !changed {
                break;
            }
            assign = pts.lloyd(&mut centers, cfg.max_iters, &mut history);
        }
    }

    // merge exact duplicates, then relabel by canonical first member
    for c in 0..centers.len() {
        if let Some(twin) = (0..c).find(|&o| sq_dist(&centers[o], &centers[c]) == 0.0) {
            for a in assign.iter_mut().filter(|a| **a == c) {
                *a = twin;
            }
        }
    }
    let mut relabel = vec![usize::MAX; centers.len()];
    let mut next = 0;
    for &i in &pts.order {
        if relabel[assign[i]] == usize::MAX {
            relabel[assign[i]] = next;
            next += 1;
        }
    }
    let assignments: Vec<usize> = assign.iter().map(|&a| relabel[a]).collect();
    let mut members = vec![Vec::new(); next];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .map(|(id, member_ids)| {
            let mut mean = vec![0.0; dim];
            let mut ordered = member_ids.clone();
            ordered.sort_by(|&a, &b| lex_cmp(pts.data[a], pts.data[b]));
            for &i in &ordered {
                for (m, x) in mean.iter_mut().zip(pts.data[i]) {
                    *m += x;
                }
            }
            let centroid = EmbeddingVector::normalize(mean).unwrap_or_else(|_| EmbeddingVector::basis(dim));
            QuestionCluster {
                id,
                member_ids,
                centroid,
                confidence: None,
            }
        })
        .collect::<Vec<_>>();

    Ok(ClusteringOutcome {
        effective_k: clusters.len(),
        clusters,
        assignments,
        requested_k: cfg.k,
        objective_history: history,
        adjustment,
    })
}

fn merge_closest(assign: &[usize], centers: &mut Vec<Vec<f64>>, max_sq: f64) -> bool {
    let mut best: Option<(usize, usize, f64)> = None;
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            let d = sq_dist(&centers[a], &centers[b]);
            if d < max_sq && best.is_none_or(|x| d < x.2) {
                best = Some((a, b, d));
            }
        }
    }
    let Some((a, b, _)) = best else { return false };
    let na = assign.iter().filter(|&&x| x == a).count().max(1) as f64;
    let nb = assign.iter().filter(|&&x| x == b).count() as f64;
    let merged: Vec<f64> = centers[a]
        .iter()
        .zip(&centers[b])
        .map(|(x, y)| (x * na + y * nb) / (na + nb))
        .collect();
    centers[a] = merged;
    centers.remove(b);
    true
}

fn split_widest(pts: &Points, assign: &[usize], centers: &mut Vec<Vec<f64>>, max_var: f64, cap: usize) -> bool {
    if centers.len() >= cap {
        return false;
    }
    let mut widest: Option<(usize, f64)> = None;
    for (c, center) in centers.iter().enumerate() {
        let members: Vec<usize> = pts.order.iter().copied().filter(|&i| assign[i] == c).collect();
        if members.len() < 2 {
            continue;
        }
        let var = members.iter().map(|&i| sq_dist(pts.data[i], center)).sum::<f64>() / members.len() as f64;
        if var > max_var && widest.is_none_or(|w| var > w.1) {
            widest = Some((c, var));
        }
    }
    let Some((c, _)) = widest else { return false };
    let far = pts
        .order
        .iter()
        .copied()
        .filter(|&i| assign[i] == c)
        .map(|i| (i, sq_dist(pts.data[i], &centers[c])))
        .fold(None::<(usize, f64)>, |acc, x| match acc {
            Some(a) if a.1 >= x.1 => Some(a),
            _ => Some(x),
        })
        .expect("cluster has members");
    centers.push(pts.data[far.0].to_vec());
    true
}

/// Masks, embeds and clusters questions.
pub fn cluster_questions(
    questions: &[String],
    embedder: &dyn TextEmbedder,
    cfg: &ClusteringConfig,
) -> Result<(Vec<MaskedQuestion>, ClusteringOutcome)> {
    let masked: Vec<MaskedQuestion> = questions.iter().map(|q| mask_entities(q)).collect();
    let embeddings = masked
        .iter()
        .map(|m| embedder.embed(&m.masked))
        .collect::<Result<Vec<_>>>()?;
    let outcome = cluster(&embeddings, cfg)?;
    Ok((masked, outcome))
}

/// Up to `n_per_cluster` original questions from every cluster, sampled
/// without replacement.
pub fn select_diverse_demonstrations(
    clusters: &[QuestionCluster],
    questions: &[String],
    n_per_cluster: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if clusters.is_empty() {
        return Err(Error::InvalidArgument("no clusters to draw demonstrations from".into()));
    }
    let mut out = Vec::new();
    for c in clusters {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, &format!("demos/{}", c.id)));
        let take = n_per_cluster.min(c.member_ids.len());
        for pick in rand::seq::index::sample(&mut rng, c.member_ids.len(), take) {
            let q = questions.get(c.member_ids[pick]).ok_or_else(|| {
                Error::InvalidArgument(format!("cluster member {} has no question", c.member_ids[pick]))
            })?;
            out.push(q.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReportRow {
    pub cluster_id: usize,
    pub size: usize,
    pub confidence: Option<f64>,
    pub samples: Vec<String>,
}

/// One JSON line per cluster with its first three member questions.
pub fn write_cluster_report(path: &Path, clusters: &[QuestionCluster], questions: &[String]) -> Result<()> {
    let rows = clusters.iter().map(|c| ClusterReportRow {
        cluster_id: c.id,
        size: c.member_ids.len(),
        confidence: c.confidence,
        samples: c
            .member_ids
            .iter()
            .take(3)
            .filter_map(|&i| questions.get(i).cloned())
            .collect(),
    });
    write_jsonl(path, rows)
}
