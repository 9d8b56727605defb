//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are never captured; exits non-zero if any
//! criterion failed.

mod common;

use common::cli;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relabel::cluster::{cluster_questions, ClusteringConfig};
use relabel::data::{ChunkingPolicy, SupportLevel, TrainingTuple};
use relabel::encoder::{similarity, EmbeddingVector, EncoderConfig, EncoderParams, HashedTextEmbedder, Side};
use relabel::index::VectorIndex;
use relabel::inference::{ensemble_answer, permutations, reorder, MockReader, Passage, Reader};
use relabel::labeler::{LabelerOracle, MockOracle};
use relabel::synthetic::{adaptive_fixture, gold_in_middle_fixtures, separable_task, SeparableConfig};
use relabel::training::{
    adaptive_round, evaluate_documents, list_loss, pair_loss, train, AdaptiveConfig, LossConfig, ThresholdPolicy,
    TrainSchedule,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass && elapsed < limit, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "criterion {id} [{name}]: {} ({detail}; {:.2}s, limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn criterion_1() -> Outcome {
    let list = list_loss(&[0.3; 4], 0, 1.0).unwrap();
    let pair = pair_loss(
        &[SupportLevel::Full, SupportLevel::Partial, SupportLevel::No],
        &[0.7; 3],
        None,
    );
    let (e1, e2) = ((list - 4f64.ln()).abs(), (pair - 3.0 * 2f64.ln()).abs());
    check(e1 < 1e-9 && e2 < 1e-9, format!("list err {e1:.1e}, pair err {e2:.1e}"))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for dim in [4, 8, 16] {
        for seed in 0..40u64 {
            let (params, sets, loss) = common::gradient_instance(seed * 31 + dim as u64, dim);
            worst = worst.max(common::max_gradient_error(&params, &sets, &loss, 1e-5, 1e-6));
            n += 1;
        }
    }
    check(worst < 1e-5, format!("{n} instances, max relative error {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_unit = |rng: &mut ChaCha8Rng| {
        EmbeddingVector::normalize((0..100).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let rows: Vec<(String, EmbeddingVector)> = (0..1000).map(|i| (format!("v{i:04}"), random_unit(&mut rng))).collect();
    let index = VectorIndex::build(rows.clone(), "h".into()).unwrap();
    let mut mismatches = 0;
    let mut checked = 0;
    for qi in 0..50 {
        let q = random_unit(&mut rng);
        let mut scan: Vec<(f64, &str)> = rows.iter().map(|(id, v)| (similarity(&q, v), id.as_str())).collect();
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        for k in [1, 10, 20] {
            let got = index.search(&format!("q{qi}"), &q, k).unwrap();
            let expected: Vec<&str> = scan[..k].iter().map(|s| s.1).collect();
            let ids: Vec<&str> = got.hits.iter().map(|h| h.id.as_str()).collect();
            if ids != expected || got.hits.iter().zip(&scan).any(|(h, s)| h.score != s.0) {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    check(mismatches == 0, format!("{checked} searches, {mismatches} mismatches"))
}

struct Trained {
    params: EncoderParams,
    task: relabel::synthetic::SeparableTask,
}

fn train_separable() -> Trained {
    let task = separable_task(&SeparableConfig::default()).unwrap();
    let init = EncoderParams::random(EncoderConfig::default(), 0).unwrap();
    let out = train(
        &task.corpus,
        &task.train_tuples,
        None,
        init,
        &TrainSchedule::default(),
        &LossConfig::default(),
    )
    .unwrap();
    Trained {
        params: out.params,
        task,
    }
}

fn criterion_4(t: &Trained) -> Outcome {
    let r = evaluate_documents(&t.params, &t.task.corpus, &t.task.heldout_queries, &[1, 10]).unwrap();
    check(
        r[&1] >= 0.95 && r[&10] == 1.0,
        format!(
            "{} held-out queries, Recall@1 {:.3}, Recall@10 {:.3}",
            t.task.heldout_queries.len(),
            r[&1],
            r[&10]
        ),
    )
}

fn criterion_5(t: &Trained) -> Outcome {
    let s = |q: &str, text: &str| {
        similarity(
            &t.params.encode(q, Side::Query).unwrap(),
            &t.params.encode(text, Side::Document).unwrap(),
        )
    };
    let total = t.task.heldout_triples.len();
    let (mut ordered, mut full_not_above, mut partial_not_above) = (0, 0, 0);
    for tr in &t.task.heldout_triples {
        let (f, p, n) = (s(&tr.question, &tr.full.text), s(&tr.question, &tr.partial.text), s(&tr.question, &tr.no.text));
        full_not_above += usize::from(f <= p);
        partial_not_above += usize::from(p <= n);
        ordered += usize::from(f > p && p > n);
    }
    let frac = ordered as f64 / total.max(1) as f64;
    check(
        total > 0 && frac >= 0.95,
        format!("{ordered}/{total} triples ordered ({frac:.3}); full<=partial {full_not_above}, partial<=no {partial_not_above}"),
    )
}

fn criterion_6() -> Outcome {
    let fixture = adaptive_fixture(30, 40, 6).unwrap();
    let chunking = ChunkingPolicy::default();
    let schedule = TrainSchedule::default();
    let loss = LossConfig::default();
    let init = EncoderParams::random(EncoderConfig::default(), 6).unwrap();
    let warm = train(&fixture.corpus, &fixture.seed_tuples, None, init, &schedule, &loss).unwrap().params;

    let questions: Vec<String> = fixture.pairs.iter().map(|p| p.question.clone()).collect();
    let embedder = HashedTextEmbedder::default();
    let (_, clustering) = cluster_questions(
        &questions,
        &embedder,
        &ClusteringConfig {
            k: 3,
            ..Default::default()
        },
    )
    .unwrap();

    let labeled_run = |percentile: f64| {
        let oracle = MockOracle::new(6, chunking);
        let mut clusters = clustering.clusters.clone();
        let cfg = AdaptiveConfig {
            threshold: ThresholdPolicy::Percentile(percentile),
            ..Default::default()
        };
        let round = adaptive_round(&warm, &fixture.pairs, &mut clusters, &cfg, &oracle, &chunking, &embedder).unwrap();
        let mut tuples: Vec<TrainingTuple> = fixture.seed_tuples.clone();
        tuples.extend(round.self_labeled.iter().cloned());
        tuples.extend(round.oracle_labeled.iter().cloned());
        let params = train(&fixture.corpus, &tuples, None, warm.clone(), &schedule, &loss).unwrap().params;
        let recall = evaluate_documents(&params, &fixture.corpus, &fixture.dev, &[10]).unwrap()[&10];
        let routed_families: std::collections::BTreeSet<usize> = clusters
            .iter()
            .zip(&round.report.clusters)
            .filter(|(_, d)| !d.confident)
            .flat_map(|(c, _)| c.member_ids.iter().map(|&m| fixture.families[m]))
            .collect();
        (oracle.usage().calls, recall, routed_families)
    };
    let (adaptive_calls, adaptive_recall, routed) = labeled_run(40.0);
    let (full_calls, full_recall, _) = labeled_run(100.0);
    let saving = 1.0 - adaptive_calls as f64 / full_calls.max(1) as f64;
    check(
        routed == [2].into() && saving >= 0.5 && (adaptive_recall - full_recall).abs() <= 0.02,
        format!(
            "oracle calls {adaptive_calls} vs {full_calls} ({:.0}% saved), routed families {routed:?}, Recall@10 {adaptive_recall:.3} vs {full_recall:.3}",
            saving * 100.0
        ),
    )
}

fn criterion_7() -> Outcome {
    let docs: Vec<String> = (1..=9).map(|i| format!("d{i}")).collect();
    let got = reorder(&docs, 3).unwrap().order.join(" ");
    let exact = got == "d1 d2 d3 d7 d8 d9 d6 d5 d4";
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=60);
        let j = rng.random_range(1..=k / 2);
        let items: Vec<usize> = (0..k).collect();
        let r = reorder(&items, j).unwrap();
        let mut sorted = r.order.clone();
        sorted.sort_unstable();
        let shape = r.order[..j] == items[..j]
            && r.order[k - j..].iter().rev().eq(items[j..2 * j].iter())
            && r.head + r.middle + r.tail == k;
        if sorted != items || !shape {
            violations += 1;
        }
    }
    check(exact && violations == 0, format!("k=9 j=3 -> {got}; {violations} violations in 1000 draws"))
}

fn argmax(reader: &dyn Reader, question: &str, candidates: &[String], perms: &[Vec<Passage>]) -> String {
    ensemble_answer(question, candidates, perms, reader, 4).unwrap().best().unwrap().answer.clone()
}

fn criterion_8() -> Outcome {
    let fixtures = gold_in_middle_fixtures(40, 8);
    let agnostic = MockReader::position_agnostic();
    let biased = MockReader::position_biased();
    let (mut agree, mut naive_hits, mut reordered_hits) = (0, 0, 0);
    for f in &fixtures {
        let naive = vec![f.passages.clone()];
        let r1 = reorder(&f.passages, 3).unwrap();
        let perms = permutations(&r1, 4, 8);
        if argmax(&agnostic, &f.question, &f.candidates, &naive) == argmax(&agnostic, &f.question, &f.candidates, &perms) {
            agree += 1;
        }
        naive_hits += usize::from(argmax(&biased, &f.question, &f.candidates, &naive) == f.gold);
        reordered_hits += usize::from(argmax(&biased, &f.question, &f.candidates, &perms) == f.gold);
    }
    let n = fixtures.len();
    let (naive_acc, reordered_acc) = (naive_hits as f64 / n as f64, reordered_hits as f64 / n as f64);
    check(
        agree == n && reordered_acc - naive_acc >= 0.10,
        format!(
            "agnostic agreement {agree}/{n}; biased accuracy naive {:.1}% vs middle-rank {:.1}%",
            naive_acc * 100.0,
            reordered_acc * 100.0
        ),
    )
}

const PIPELINE: &[&str] = &[
    "ingest",
    "generate-data",
    "train",
    "adaptive-label",
    "build-index",
    "eval-retrieval",
    "answer",
    "report",
];

/// Every command run in two separate directories; all files written must
/// hash the same.
fn criterion_9() -> Outcome {
    let runs: Vec<BTreeMap<String, String>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = cli::workspace(dir.path(), "[schedule]\nmain_epochs = 2\n");
            for cmd in PIPELINE {
                assert_eq!(cli::status(&cfg, &[cmd]), 0, "{cmd} failed");
            }
            cli::tree_hashes(&dir.path().join("run"))
        })
        .collect();
    let differing: Vec<&String> = runs[0]
        .iter()
        .filter(|(k, v)| runs[1].get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    let same_files = runs[0].len() == runs[1].len();
    check(
        same_files && differing.is_empty() && runs[0].len() >= PIPELINE.len(),
        format!("{} artifacts from {} commands, differing {differing:?}", runs[0].len(), PIPELINE.len()),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        run(1, "loss closed forms", secs(1), criterion_1),
        run(2, "gradient oracle", secs(30), criterion_2),
        run(3, "index exactness", secs(10), criterion_3),
    ];
    let start = Instant::now();
    let trained = catch_unwind(train_separable);
    let train_time = start.elapsed();
    match &trained {
        Ok(t) => {
            results.push(run(4, "synthetic retrieval learning", secs(120).saturating_sub(train_time), || criterion_4(t)));
            results.push(run(5, "three-level ordering", secs(120), || criterion_5(t)));
        }
        Err(_) => {
            println!("criterion 4 [synthetic retrieval learning]: FAIL (training panicked)");
            println!("criterion 5 [three-level ordering]: FAIL (training panicked)");
            results.extend([false, false]);
        }
    }
    println!("(separable training took {:.2}s)", train_time.as_secs_f64());
    results.push(run(6, "adaptive labeling economy", secs(180), criterion_6));
    results.push(run(7, "reordering correctness", secs(10), criterion_7));
    results.push(run(8, "ensemble invariance and benefit", secs(30), criterion_8));
    results.push(run(9, "reproducibility", secs(120), criterion_9));
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
