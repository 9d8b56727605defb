//! Dual encoder scored by cosine similarity.
//!
//! The reference encoder hashes word unigrams and bigrams into a sparse
//! feature vector, multiplies it by a learned `F x D` projection and
//! normalizes the result to unit length. Every gradient is closed form.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalized_tokens, stable_hash};
use crate::training::{CandidateSet, LossConfig, LossValue};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optim::{apply_update, OptimizerConfig, OptimizerKind, OptimizerState};

/// Norms below this are treated as a degenerate (all-zero) projection.
const NORM_FLOOR: f64 = 1e-12;

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `raw`; fails when its norm underflows.
    pub fn normalize(raw: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&raw);
        if !norm.is_finite() || norm < NORM_FLOOR {
            return Err(Error::DegenerateEmbedding(format!(
                "norm {norm:e} of a {}-dimensional vector",
                raw.len()
            )));
        }
        Ok(EmbeddingVector(raw.into_iter().map(|x| x / norm).collect()))
    }

    /// The first standard basis vector, used for inputs without features.
    pub fn basis(dim: usize) -> Self {
        let mut v = vec![0.0; dim.max(1)];
        v[0] = 1.0;
        EmbeddingVector(v)
    }

    /// Wraps values already known to be unit length.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "embedding norm {norm} is not 1"
            )));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two unit vectors.
pub fn similarity(q: &EmbeddingVector, d: &EmbeddingVector) -> f64 {
    dot(&q.0, &d.0).clamp(-1.0, 1.0)
}

/// Anything that maps text to a unit embedding.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Sparse, L2-normalized hashed n-gram counts. Indices ascend.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    pub entries: Vec<(usize, f64)>,
}

/// Hashed word unigram and bigram counts over `feature_dim` buckets.
/// Text without tokens maps to the first basis vector.
pub fn featurize(text: &str, feature_dim: usize) -> SparseFeatures {
    let feature_dim = feature_dim.max(1);
    let tokens = normalized_tokens(text);
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in &tokens {
        *counts.entry(unigram_bucket(t, feature_dim)).or_default() += 1.0;
    }
    for pair in tokens.windows(2) {
        *counts
            .entry(bigram_bucket(&pair[0], &pair[1], feature_dim))
            .or_default() += 1.0;
    }
    if counts.is_empty() {
        return SparseFeatures {
            entries: vec![(0, 1.0)],
        };
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    SparseFeatures {
        entries: counts.into_iter().map(|(i, c)| (i, c / norm)).collect(),
    }
}

pub fn unigram_bucket(token: &str, feature_dim: usize) -> usize {
    (stable_hash(&[b"u", token.as_bytes()]) % feature_dim as u64) as usize
}

pub fn bigram_bucket(first: &str, second: &str, feature_dim: usize) -> usize {
    (stable_hash(&[b"b", first.as_bytes(), second.as_bytes()]) % feature_dim as u64) as usize
}

/// Hashed features folded directly into a small dense space, without a
/// learned projection. Used to embed questions for clustering.
#[derive(Debug, Clone, Copy)]
pub struct HashedTextEmbedder {
    pub dim: usize,
}

impl HashedTextEmbedder {
    pub fn new(dim: usize) -> Self {
        HashedTextEmbedder { dim: dim.max(1) }
    }
}

impl Default for HashedTextEmbedder {
    fn default() -> Self {
        HashedTextEmbedder::new(256)
    }
}

impl TextEmbedder for HashedTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = vec![0.0; self.dim];
        for (i, x) in featurize(text, self.dim).entries {
            v[i] += x;
        }
        // already unit length: buckets are distinct after the BTreeMap merge
        Ok(EmbeddingVector(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Query,
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub dim: usize,
    /// One projection for both sides when true.
    pub shared: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            feature_dim: 1 << 16,
            dim: 256,
            shared: true,
        }
    }
}

/// Projection matrices, row-major by feature (`feature_dim` rows of `dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub(crate) query: Vec<f64>,
    pub(crate) document: Option<Vec<f64>>,
}

impl EncoderParams {
    /// Standard normal initialization. Adam moves every entry by roughly the
    /// learning rate per step, so the entry scale sets how far one step goes
    /// relative to the untrained rows.
    pub fn random(config: EncoderConfig, seed: u64) -> Result<Self> {
        if config.feature_dim == 0 || config.dim == 0 {
            return Err(Error::InvalidArgument(
                "encoder dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let size = config.feature_dim * config.dim;
        let query: Vec<f64> = (0..size).map(|_| normal.sample(&mut rng)).collect();
        let document = (!config.shared).then(|| (0..size).map(|_| normal.sample(&mut rng)).collect());
        Ok(EncoderParams {
            config,
            query,
            document,
        })
    }

    pub fn zeros(config: EncoderConfig) -> Self {
        let size = config.feature_dim * config.dim;
        EncoderParams {
            config,
            query: vec![0.0; size],
            document: (!config.shared).then(|| vec![0.0; size]),
        }
    }

    pub fn from_matrices(
        config: EncoderConfig,
        query: Vec<f64>,
        document: Option<Vec<f64>>,
    ) -> Result<Self> {
        let size = config.feature_dim * config.dim;
        let doc_ok = match (&document, config.shared) {
            (None, true) => true,
            (Some(d), false) => d.len() == size,
            _ => false,
        };
        if query.len() != size || !doc_ok {
            return Err(Error::Checkpoint(
                "matrix shapes do not match encoder config".into(),
            ));
        }
        let params = EncoderParams {
            config,
            query,
            document,
        };
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn projection(&self, side: Side) -> &[f64] {
        match (side, &self.document) {
            (Side::Document, Some(d)) => d,
            _ => &self.query,
        }
    }

    pub(crate) fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        std::iter::once(&mut self.query).chain(self.document.as_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.query.iter().chain(self.document.iter().flatten()).all(|x| x.is_finite())
    }

    /// Unnormalized projection of sparse features.
    pub fn project(&self, features: &SparseFeatures, side: Side) -> Vec<f64> {
        let d = self.config.dim;
        let matrix = self.projection(side);
        let mut z = vec![0.0; d];
        for &(f, x) in &features.entries {
            let row = &matrix[f * d..(f + 1) * d];
            for (zi, wi) in z.iter_mut().zip(row) {
                *zi += x * wi;
            }
        }
        z
    }

    pub fn encode(&self, text: &str, side: Side) -> Result<EmbeddingVector> {
        let features = featurize(text, self.config.feature_dim);
        EmbeddingVector::normalize(self.project(&features, side))
    }

    /// SHA-256 of the checkpoint encoding.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(checkpoint::encode(self)))
    }

    pub fn embedder(&self, side: Side) -> SideEmbedder<'_> {
        SideEmbedder { params: self, side }
    }
}

/// Borrowed encoder bound to one side.
#[derive(Debug, Clone, Copy)]
pub struct SideEmbedder<'a> {
    params: &'a EncoderParams,
    side: Side,
}

impl TextEmbedder for SideEmbedder<'_> {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.params.encode(text, self.side)
    }
}

/// Sparse-row gradient with the same shape as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub dim: usize,
    pub query: BTreeMap<usize, Vec<f64>>,
    /// Present only for separate projections.
    pub document: Option<BTreeMap<usize, Vec<f64>>>,
}

impl GradientBundle {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        GradientBundle {
            dim: params.config.dim,
            query: BTreeMap::new(),
            document: (!params.config.shared).then(BTreeMap::new),
        }
    }

    fn rows_mut(&mut self, side: Side) -> &mut BTreeMap<usize, Vec<f64>> {
        match (side, self.document.as_mut()) {
            (Side::Document, Some(d)) => d,
            _ => &mut self.query,
        }
    }

    pub fn rows(&self, side: Side) -> &BTreeMap<usize, Vec<f64>> {
        match (side, self.document.as_ref()) {
            (Side::Document, Some(d)) => d,
            _ => &self.query,
        }
    }

    fn add_outer(&mut self, side: Side, features: &SparseFeatures, grad_z: &[f64]) {
        let dim = self.dim;
        let rows = self.rows_mut(side);
        for &(f, x) in &features.entries {
            let row = rows.entry(f).or_insert_with(|| vec![0.0; dim]);
            for (r, g) in row.iter_mut().zip(grad_z) {
                *r += x * g;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.query
            .values()
            .chain(self.document.iter().flat_map(|d| d.values()))
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.query
            .values()
            .chain(self.document.iter().flat_map(|d| d.values()))
            .flatten()
            .all(|x| x.is_finite())
    }

    /// Dense copy of one side's gradient, row-major like the projection.
    pub fn to_dense(&self, side: Side, feature_dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; feature_dim * self.dim];
        for (&f, row) in self.rows(side) {
            out[f * self.dim..(f + 1) * self.dim].copy_from_slice(row);
        }
        out
    }
}

/// Loss and gradients for a batch; the batch loss is the sum over examples.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    pub loss_list: f64,
    pub loss_pair: f64,
    pub grads: GradientBundle,
}

struct Encoded {
    features: SparseFeatures,
    unit: Vec<f64>,
    norm: f64,
}

impl EncoderParams {
    fn encode_for_grad(&self, text: &str, side: Side, index: usize) -> Result<Encoded> {
        let features = featurize(text, self.config.feature_dim);
        let z = self.project(&features, side);
        let norm = l2_norm(&z);
        if !norm.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if norm < NORM_FLOOR {
            return Err(Error::DegenerateEmbedding(format!(
                "example {index}: zero projection for {text:?}"
            )));
        }
        Ok(Encoded {
            features,
            unit: z.iter().map(|x| x / norm).collect(),
            norm,
        })
    }
}

/// Gradient of a unit vector's upstream gradient back through `v = z / |z|`.
fn through_normalization(e: &Encoded, grad_v: &[f64]) -> Vec<f64> {
    let proj = dot(grad_v, &e.unit);
    grad_v
        .iter()
        .zip(&e.unit)
        .map(|(g, v)| (g - proj * v) / e.norm)
        .collect()
}

/// Evaluates the ranking loss on every candidate set and chains its score
/// gradients through cosine similarity, normalization and the projection.
pub fn forward_backward(
    params: &EncoderParams,
    batch: &[CandidateSet],
    loss_cfg: &LossConfig,
) -> Result<ForwardOutput> {
    let mut grads = GradientBundle::zeros_like(params);
    let (mut loss, mut loss_list, mut loss_pair) = (0.0, 0.0, 0.0);

    for (index, set) in batch.iter().enumerate() {
        let query = params.encode_for_grad(&set.query, Side::Query, index)?;
        let docs = set
            .candidates
            .iter()
            .map(|c| params.encode_for_grad(&c.text, Side::Document, index))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = docs.iter().map(|d| dot(&query.unit, &d.unit)).collect();
        let labels: Vec<_> = set.candidates.iter().map(|c| c.label).collect();

        let LossValue {
            list,
            pair,
            total,
            grad,
        } = loss_cfg.evaluate(&scores, &labels, set.positive)?;
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        loss += total;
        loss_list += list;
        loss_pair += pair;

        let dim = params.config.dim;
        let mut grad_vq = vec![0.0; dim];
        for (doc, &g) in docs.iter().zip(&grad) {
            if g == 0.0 {
                continue;
            }
            for (acc, v) in grad_vq.iter_mut().zip(&doc.unit) {
                *acc += g * v;
            }
            let grad_vd: Vec<f64> = query.unit.iter().map(|v| g * v).collect();
            let grad_zd = through_normalization(doc, &grad_vd);
            grads.add_outer(Side::Document, &doc.features, &grad_zd);
        }
        let grad_zq = through_normalization(&query, &grad_vq);
        grads.add_outer(Side::Query, &query.features, &grad_zq);
    }

    if !grads.is_finite() {
        return Err(Error::NonFinite {
            index: batch.len().saturating_sub(1),
        });
    }
    Ok(ForwardOutput {
        loss,
        loss_list,
        loss_pair,
        grads,
    })
}

/// Loss only, without gradients.
pub fn forward_loss(params: &EncoderParams, batch: &[CandidateSet], loss_cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for (index, set) in batch.iter().enumerate() {
        let q = params.encode_for_grad(&set.query, Side::Query, index)?;
        let scores = set
            .candidates
            .iter()
            .map(|c| {
                params
                    .encode_for_grad(&c.text, Side::Document, index)
                    .map(|d| dot(&q.unit, &d.unit))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<_> = set.candidates.iter().map(|c| c.label).collect();
        total += loss_cfg.evaluate(&scores, &labels, set.positive)?.total;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn similarity_examples() {
        let v = EmbeddingVector::normalize(vec![0.3, -0.4, 1.2]).unwrap();
        let neg = EmbeddingVector::normalize(v.as_slice().iter().map(|x| -x).collect()).unwrap();
        assert_abs_diff_eq!(similarity(&v, &v), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(similarity(&v, &neg), -1.0, epsilon = 1e-12);
        let q = EmbeddingVector::from_unit(vec![1.0, 0.0]).unwrap();
        let d = EmbeddingVector::normalize(vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(similarity(&q, &d), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-8);
    }

    #[test]
    fn empty_text_features_are_first_basis() {
        assert_eq!(featurize("", 64).entries, vec![(0, 1.0)]);
        assert_eq!(featurize("  ?! ", 64).entries, vec![(0, 1.0)]);
        assert_eq!(HashedTextEmbedder::new(8).embed("").unwrap(), EmbeddingVector::basis(8));
    }

    #[test]
    fn word_order_moves_only_bigram_mass() {
        let f = 1 << 16;
        let ab = featurize("a b", f);
        let ba = featurize("b a", f);
        let unigrams = [unigram_bucket("a", f), unigram_bucket("b", f)];
        let (ab_bi, ba_bi) = (bigram_bucket("a", "b", f), bigram_bucket("b", "a", f));
        assert_ne!(ab_bi, ba_bi);
        for u in unigrams {
            let get = |fs: &SparseFeatures| fs.entries.iter().find(|e| e.0 == u).unwrap().1;
            assert_eq!(get(&ab), get(&ba));
        }
        assert!(ab.entries.iter().any(|e| e.0 == ab_bi));
        assert!(!ab.entries.iter().any(|e| e.0 == ba_bi));
        assert_abs_diff_eq!(ab.entries.iter().map(|e| e.1 * e.1).sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn encode_is_unit_norm_and_deterministic() {
        let params = EncoderParams::random(
            EncoderConfig {
                feature_dim: 512,
                dim: 16,
                shared: false,
            },
            3,
        )
        .unwrap();
        for text in ["", "hello world", "The quick brown fox."] {
            let a = params.encode(text, Side::Query).unwrap();
            let b = params.encode(text, Side::Query).unwrap();
            assert_eq!(a, b);
            assert_abs_diff_eq!(l2_norm(a.as_slice()), 1.0, epsilon = 1e-6);
        }
        assert_ne!(
            params.encode("hello", Side::Query).unwrap(),
            params.encode("hello", Side::Document).unwrap()
        );
    }

    #[test]
    fn zero_projection_is_degenerate() {
        let params = EncoderParams::zeros(EncoderConfig {
            feature_dim: 32,
            dim: 4,
            shared: true,
        });
        assert!(matches!(
            params.encode("anything", Side::Query),
            Err(Error::DegenerateEmbedding(_))
        ));
    }
}
