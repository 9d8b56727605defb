//! Randomized checks of the stated invariants of each module.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;

use relabel::cluster::{cluster, mask_entities, ClusteringConfig, MASK_TOKEN};
use relabel::data::{
    chunk_document, load_tuples, save_tuples, word_count, ChunkingPolicy, Document, EvidenceChunk, Provenance,
    SupportLevel, TrainingTuple,
};
use relabel::encoder::{load_checkpoint, save_checkpoint, similarity, EmbeddingVector, EncoderConfig, EncoderParams, Side};
use relabel::index::{recall_at_k, Hit, RetrievalResult, VectorIndex};
use relabel::inference::{ensemble_answer, permutations, reorder, MockReader, Passage, Reader};
use relabel::labeler::{LabelerOracle, MockOracle};
use relabel::training::{list_loss, pair_loss};

const WORDS: &[&str] = &[
    "river", "stone", "bright", "under", "castle", "window", "seven", "quiet", "market", "garden", "silver",
    "forest", "lantern", "mirror", "harvest", "winter",
];
const NAMES: &[&str] = &["Alder", "Brook", "Corvin", "Dunmore", "Elsworth", "Fairhaven"];

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(WORDS).prop_map(str::to_owned)
}

fn sentence() -> impl Strategy<Value = String> {
    (prop::collection::vec(word(), 1..14), prop::sample::select(&[".", "!", "?"][..])).prop_map(|(ws, end)| {
        let mut s = ws.join(" ");
        if let Some(f) = s.get_mut(0..1) {
            f.make_ascii_uppercase();
        }
        s + end
    })
}

fn text() -> impl Strategy<Value = String> {
    (prop::collection::vec(sentence(), 1..10), prop::collection::vec(prop::sample::select(&[" ", "  ", "\n", " \n\t"][..]), 10))
        .prop_map(|(ss, seps)| {
            let mut out = String::new();
            for (i, s) in ss.iter().enumerate() {
                if i > 0 {
                    out.push_str(seps[i % seps.len()]);
                }
                out.push_str(s);
            }
            out
        })
}

fn unit_vec(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| EmbeddingVector::normalize(v).unwrap())
}

fn support() -> impl Strategy<Value = SupportLevel> {
    prop::sample::select(vec![SupportLevel::Full, SupportLevel::Partial, SupportLevel::No])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunks_reconstruct_text_and_obey_limits(t in text(), max_words in 1usize..12, max_sentences in 1usize..4) {
        let doc = Document::new("d", t.clone());
        let policy = ChunkingPolicy::new(max_words, max_sentences).unwrap();
        let chunks = chunk_document(&doc, &policy);
        prop_assert!(!chunks.is_empty());
        let mut rebuilt = String::new();
        let mut prev_end = t.len() - t.trim_start().len();
        rebuilt.push_str(&t[..prev_end]);
        for c in &chunks {
            prop_assert!(c.start < c.end && c.end <= t.len());
            prop_assert_eq!(&t[c.start..c.end], c.text.as_str());
            prop_assert!(t[prev_end..c.start].chars().all(char::is_whitespace));
            prop_assert!(word_count(&c.text) <= max_words, "{:?}", c.text);
            rebuilt.push_str(&t[prev_end..c.start]);
            rebuilt.push_str(&c.text);
            prev_end = c.end;
        }
        rebuilt.push_str(&t[prev_end..]);
        prop_assert_eq!(rebuilt, t);
    }

    #[test]
    fn tuple_serialization_round_trips(
        q in prop::collection::vec(word(), 1..6),
        t in text(),
        span in (0.0f64..1.0, 0.0f64..1.0),
        s in support(),
        p in prop::sample::select(vec![Provenance::Generated, Provenance::SelfLabeled, Provenance::OracleLabeled, Provenance::Benchmark]),
    ) {
        let doc = Document::new("doc-1", t.clone());
        let chunks = chunk_document(&doc, &ChunkingPolicy::default());
        let c = &chunks[((span.0 * chunks.len() as f64) as usize).min(chunks.len() - 1)];
        let chunk = EvidenceChunk::from_document(&doc, c.start, c.end).unwrap();
        let tuple = TrainingTuple::new(q.join(" ") + "?", chunk, s, p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_tuples(std::slice::from_ref(&tuple), &path).unwrap();
        let back = load_tuples(&path).unwrap();
        prop_assert_eq!(back, vec![tuple]);
        let _ = span.1;
    }

    #[test]
    fn masking_is_idempotent_and_keeps_structure(
        parts in prop::collection::vec(prop_oneof![word(), prop::sample::select(NAMES).prop_map(str::to_owned), (1u32..3000).prop_map(|n| n.to_string())], 1..12),
    ) {
        let q = format!("what {}?", parts.join(" "));
        let m = mask_entities(&q);
        prop_assert_eq!(m.masked.matches(MASK_TOKEN).count(), m.mask_count);
        let again = mask_entities(&m.masked);
        prop_assert_eq!(&again.masked, &m.masked);
        prop_assert_eq!(again.mask_count, m.mask_count);
        let lower = |s: &str| -> Vec<String> {
            s.split(|c: char| !c.is_alphanumeric() && c != '[' && c != ']')
                .filter(|w| !w.is_empty() && *w != MASK_TOKEN && w.chars().next().is_some_and(|c| c.is_lowercase()))
                .map(str::to_owned)
                .collect()
        };
        prop_assert_eq!(lower(&m.masked), lower(&q));
    }

    #[test]
    fn kmeans_objective_never_increases(points in prop::collection::vec(unit_vec(4), 3..40), k in 1usize..6, seed in 0u64..1000) {
        let cfg = ClusteringConfig { k, seed, restarts: 2, ..Default::default() };
        let out = cluster(&points, &cfg).unwrap();
        for w in out.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", out.objective_history);
        }
        prop_assert_eq!(out.assignments.len(), points.len());
        for c in &out.clusters {
            prop_assert!(!c.member_ids.is_empty());
        }
    }

    #[test]
    fn kmeans_ignores_input_order(
        points in prop::collection::vec(unit_vec(3), 3..30),
        k in 1usize..5,
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let cfg = ClusteringConfig { k, seed: 5, restarts: 2, ..Default::default() };
        let mut perm: Vec<usize> = (0..points.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let shuffled: Vec<EmbeddingVector> = perm.iter().map(|&i| points[i].clone()).collect();
        let a = cluster(&points, &cfg).unwrap();
        let b = cluster(&shuffled, &cfg).unwrap();
        // same partition of the original points
        let groups = |assign: &[usize], index_of: &dyn Fn(usize) -> usize| -> BTreeSet<BTreeSet<usize>> {
            let mut m: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
            for (pos, &c) in assign.iter().enumerate() {
                m.entry(c).or_default().insert(index_of(pos));
            }
            m.into_values().collect()
        };
        prop_assert_eq!(groups(&a.assignments, &|p| p), groups(&b.assignments, &|p| perm[p]));
    }

    #[test]
    fn similarity_symmetric_and_scale_invariant(
        q in prop::collection::vec(-1.0f64..1.0, 6),
        docs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 2..8),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(q.iter().any(|x| x.abs() > 1e-3) && docs.iter().all(|d| d.iter().any(|x| x.abs() > 1e-3)));
        let qv = EmbeddingVector::normalize(q.clone()).unwrap();
        let qs = EmbeddingVector::normalize(q.iter().map(|x| x * scale).collect()).unwrap();
        let dv: Vec<EmbeddingVector> = docs.iter().map(|d| EmbeddingVector::normalize(d.clone()).unwrap()).collect();
        let rank = |q: &EmbeddingVector| {
            let mut idx: Vec<usize> = (0..dv.len()).collect();
            let s: Vec<f64> = dv.iter().map(|d| similarity(q, d)).collect();
            idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            idx[0]
        };
        for d in &dv {
            prop_assert!((similarity(&qv, d) - similarity(d, &qv)).abs() < 1e-12);
        }
        prop_assert_eq!(rank(&qv), rank(&qs));
    }

    #[test]
    fn encoding_is_deterministic_and_unit(t in text(), seed in 0u64..50) {
        let cfg = EncoderConfig { feature_dim: 512, dim: 8, shared: seed.is_multiple_of(2) };
        let p = EncoderParams::random(cfg, seed).unwrap();
        for side in [Side::Query, Side::Document] {
            let a = p.encode(&t, side).unwrap();
            let b = p.encode(&t, side).unwrap();
            prop_assert_eq!(a.as_slice(), b.as_slice());
            let n: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn list_loss_falls_as_positive_rises(scores in prop::collection::vec(-1.0f64..1.0, 2..10), bump in 1e-3f64..0.5, tau in 0.05f64..2.0) {
        let base = list_loss(&scores, 0, tau).unwrap();
        let mut up = scores.clone();
        up[0] += bump;
        prop_assert!(list_loss(&up, 0, tau).unwrap() < base);
    }

    #[test]
    fn losses_ignore_constant_shift(
        scores in prop::collection::vec(-1.0f64..1.0, 2..10),
        labels in prop::collection::vec(support(), 10),
        shift in -5.0f64..5.0,
    ) {
        let labels = &labels[..scores.len()];
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let a = list_loss(&scores, 0, 0.5).unwrap();
        let b = list_loss(&shifted, 0, 0.5).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        let pa = pair_loss(labels, &scores, None);
        let pb = pair_loss(labels, &shifted, None);
        prop_assert!((pa - pb).abs() < 1e-9 * pa.abs().max(1.0));
    }

    /// Only the strict order of the labels matters: the loss equals a direct
    /// sum over pairs under the order-preserving relabeling 1 -> 9,
    /// 0.5 -> 5, 0 -> 1.
    #[test]
    fn pair_loss_depends_only_on_label_order(
        scores in prop::collection::vec(-2.0f64..2.0, 2..9),
        labels in prop::collection::vec(support(), 9),
    ) {
        let labels = &labels[..scores.len()];
        let relabel = |s: SupportLevel| match s { SupportLevel::Full => 9.0, SupportLevel::Partial => 5.0, SupportLevel::No => 1.0 };
        let mut want = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if relabel(labels[i]) > relabel(labels[j]) {
                    want += (1.0 + (scores[j] - scores[i]).exp()).ln();
                }
            }
        }
        let got = pair_loss(labels, &scores, None);
        prop_assert!((got - want).abs() < 1e-9 * want.max(1.0));
    }

    #[test]
    fn search_results_are_prefixes_and_exact(
        rows in prop::collection::vec(unit_vec(5), 1..60),
        q in unit_vec(5),
        k in 1usize..20,
    ) {
        let index = VectorIndex::build(rows.iter().enumerate().map(|(i, v)| (format!("r{i:03}"), v.clone())), String::new()).unwrap();
        let a = index.search("q", &q, k).unwrap();
        let b = index.search("q", &q, k + 1).unwrap();
        prop_assert!(a.hits.len() <= k);
        prop_assert_eq!(&a.hits[..], &b.hits[..a.hits.len()]);
        let mut oracle: Vec<(f64, String)> = rows.iter().enumerate()
            .map(|(i, v)| (v.as_slice().iter().zip(q.as_slice()).map(|(x, y)| x * y).sum(), format!("r{i:03}")))
            .collect();
        oracle.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let ids: Vec<&str> = a.hits.iter().map(|h| h.id.as_str()).collect();
        let want: Vec<&str> = oracle.iter().take(k).map(|o| o.1.as_str()).collect();
        prop_assert_eq!(ids, want);
    }

    #[test]
    fn recall_never_falls_with_k(
        ranked in prop::collection::vec(prop::collection::vec(0usize..30, 0..25), 1..10),
        gold in prop::collection::vec(0usize..30, 10),
    ) {
        let results: Vec<RetrievalResult> = ranked.iter().enumerate().map(|(qi, ids)| RetrievalResult {
            query_id: format!("q{qi}"),
            k: ids.len(),
            hits: ids.iter().map(|i| Hit { id: format!("d{i}"), score: 0.0 }).collect(),
        }).collect();
        let gold: BTreeMap<String, Vec<String>> = (0..ranked.len()).map(|qi| (format!("q{qi}"), vec![format!("d{}", gold[qi])])).collect();
        let mut prev = 0.0;
        for k in 1..=25 {
            let r = recall_at_k(&results, &gold, k);
            prop_assert!(r >= prev && (0.0..=1.0).contains(&r));
            prev = r;
        }
    }

    #[test]
    fn reorder_is_a_permutation(k in 1usize..40, j_frac in 0.0f64..1.0) {
        let items: Vec<usize> = (0..k).collect();
        let j = if k == 1 { 1 } else { 1 + ((k / 2 - 1) as f64 * j_frac).round() as usize };
        let r = reorder(&items, j).unwrap();
        let mut sorted = r.order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, items);
        prop_assert_eq!(r.head + r.middle + r.tail, k);
        for p in permutations(&r, 5, 3) {
            let mut s = p.clone();
            s.sort_unstable();
            prop_assert_eq!(s, (0..k).collect::<Vec<_>>());
        }
    }

    #[test]
    fn mock_oracle_is_pure_and_counts_calls(t in text(), q in prop::collection::vec(word(), 1..5), seed in 0u64..100) {
        let doc = Document::new("d", t);
        let question = q.join(" ");
        let a = MockOracle::new(seed, ChunkingPolicy::default());
        let b = MockOracle::new(seed, ChunkingPolicy::default());
        let ga = a.generate_question(&doc, &[]).unwrap();
        let gb = b.generate_question(&doc, &[]).unwrap();
        prop_assert_eq!(&ga.question, &gb.question);
        prop_assert_eq!(a.usage().calls, 1);
        let (ev, label) = a.identify_evidence(&question, &doc).unwrap();
        prop_assert_eq!(a.usage().calls, 2);
        prop_assert!(ev.start < ev.end && ev.end <= doc.text.len());
        prop_assert!(ev.validate_against(&doc).is_ok());
        prop_assert_eq!(b.identify_evidence(&question, &doc).unwrap(), (ev.clone(), label));
        prop_assert_eq!(a.score_evidence(&question, &ev).unwrap(), b.score_evidence(&question, &ev).unwrap());
        prop_assert_eq!(a.usage().calls, 3);
    }

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), shared in any::<bool>()) {
        let p = EncoderParams::random(EncoderConfig { feature_dim: 64, dim: 4, shared }, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back.fingerprint(), p.fingerprint());
        prop_assert_eq!(back.projection(Side::Query), p.projection(Side::Query));
        prop_assert_eq!(back.projection(Side::Document), p.projection(Side::Document));
    }
}

struct Counting<R> {
    inner: R,
    calls: AtomicUsize,
}

impl<R: Reader> Reader for Counting<R> {
    fn score_answers(&self, question: &str, context: &[&str], candidates: &[String]) -> relabel::Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_answers(question, context, candidates)
    }
}

fn passages(texts: &[String]) -> Vec<Passage> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Passage { id: format!("p{i}"), text: t.clone() })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Ensembling disjoint permutation lists adds their scores; every reader
    /// call is traced exactly once.
    #[test]
    fn ensemble_is_additive_and_fully_traced(
        texts in prop::collection::vec(text(), 3..9),
        split in 1usize..6,
        seed in 0u64..100,
        jitter in 0.0f64..0.5,
    ) {
        let ps = passages(&texts);
        let r = reorder(&ps, 1).unwrap();
        let perms = permutations(&r, 6, seed);
        prop_assume!(perms.len() >= 2);
        let split = split.min(perms.len() - 1);
        let candidates: Vec<String> = WORDS[..4].iter().map(|w| w.to_string()).collect();
        let reader = Counting {
            inner: MockReader::new(relabel::inference::MockReaderConfig { jitter, seed, ..Default::default() }),
            calls: AtomicUsize::new(0),
        };
        let all = ensemble_answer("q", &candidates, &perms, &reader, 2).unwrap();
        prop_assert_eq!(reader.calls.load(Ordering::SeqCst), perms.len());
        let mut traced: Vec<usize> = all.calls.iter().map(|c| c.permutation).collect();
        traced.sort_unstable();
        prop_assert_eq!(traced, (0..perms.len()).collect::<Vec<_>>());

        let a = ensemble_answer("q", &candidates, &perms[..split], &reader, 2).unwrap();
        let b = ensemble_answer("q", &candidates, &perms[split..], &reader, 2).unwrap();
        let score = |e: &relabel::inference::Ensemble, c: &str| e.ranking.iter().find(|s| s.answer == c).unwrap().score;
        for c in &candidates {
            let sum = score(&a, c) + score(&b, c);
            prop_assert!((score(&all, c) - sum).abs() < 1e-12 * sum.abs().max(1.0));
        }
    }

    #[test]
    fn agnostic_reader_argmax_matches_any_single_pass(texts in prop::collection::vec(text(), 3..9), seed in 0u64..100) {
        let ps = passages(&texts);
        let r = reorder(&ps, 1).unwrap();
        let perms = permutations(&r, 4, seed);
        let candidates: Vec<String> = WORDS[..5].iter().map(|w| w.to_string()).collect();
        let reader = MockReader::position_agnostic();
        let ens = ensemble_answer("q", &candidates, &perms, &reader, 1).unwrap();
        for p in &perms {
            let single = ensemble_answer("q", &candidates, std::slice::from_ref(p), &reader, 1).unwrap();
            prop_assert_eq!(&single.best().unwrap().answer, &ens.best().unwrap().answer);
        }
    }
}
