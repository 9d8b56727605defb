//! Seeded synthetic corpora and fixtures with known answers.
//!
//! Every document carries a unique capitalized name plus words from one
//! topic, so a question naming the document's name and two of its topic
//! words is fully supported by that document, partially by other documents
//! on the same topic and not at all by the rest.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{save_corpus, save_tuples, Corpus, Document, EvidenceChunk, Provenance, Source, SupportLevel, TrainingTuple};
use crate::error::Result;
use crate::inference::Passage;
use crate::text::{is_stopword, substream_seed};
use crate::training::{DevQuery, UnlabeledPair};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const TOPIC_WORDS: usize = 8;
const DOC_TOPIC_WORDS: usize = 6;

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    fn new(seed: u64) -> Self {
        Words {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
        }
    }

    fn fresh(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(*CONSONANTS.choose(&mut self.rng).expect("non-empty") as char);
                w.push(*VOWELS.choose(&mut self.rng).expect("non-empty") as char);
            }
            if !is_stopword(&w) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn capitalized(&mut self, syllables: usize) -> String {
        let w = self.fresh(syllables);
        let mut c = w.chars();
        let first = c.next().expect("non-empty").to_ascii_uppercase();
        std::iter::once(first).chain(c).collect()
    }

    /// Two fresh capitalized words.
    fn name(&mut self) -> String {
        format!("{} {}", self.capitalized(3), self.capitalized(4))
    }
}

/// A generated document and the words it was built from.
#[derive(Debug, Clone)]
struct Planned {
    doc: Document,
    name: String,
    topic: usize,
    words: Vec<String>,
}

fn plan_corpus(n_docs: usize, n_topics: usize, seed: u64, words: &mut Words, prefix: &str) -> (Vec<Planned>, Vec<Vec<String>>) {
    let topics: Vec<Vec<String>> = (0..n_topics)
        .map(|_| (0..TOPIC_WORDS).map(|_| words.fresh(3)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, "docs"));
    let docs = (0..n_docs)
        .map(|i| {
            let topic = i % n_topics;
            let name = words.name();
            let mut w = topics[topic].clone();
            w.shuffle(&mut rng);
            w.truncate(DOC_TOPIC_WORDS);
            let text = match rng.random_range(0..3) {
                0 => format!(
                    "{name} is a {} {} known for {}. The {} of {name} shows {} and {}.",
                    w[0], w[1], w[2], w[3], w[4], w[5]
                ),
                1 => format!(
                    "Near the {} lies {name}, a {} with {}. Visitors to {name} find {} beside {} and {}.",
                    w[0], w[1], w[2], w[3], w[4], w[5]
                ),
                _ => format!(
                    "{name} keeps {} and {} in the {}. Every season {name} trades {} for {} {}.",
                    w[0], w[1], w[2], w[3], w[4], w[5]
                ),
            };
            Planned {
                doc: Document {
                    id: format!("{prefix}{i:04}"),
                    title: name.clone(),
                    text,
                    source: Source::Synthetic,
                },
                name,
                topic,
                words: w,
            }
        })
        .collect();
    (docs, topics)
}

fn whole(doc: &Document) -> EvidenceChunk {
    EvidenceChunk {
        doc_id: doc.id.clone(),
        start: 0,
        end: doc.text.len(),
        text: doc.text.clone(),
    }
}

fn shared(a: &Planned, words: &[&str]) -> usize {
    words.iter().filter(|w| a.words.iter().any(|x| x == *w)).count()
}

/// Other same-topic documents containing every one of `words`.
fn partial_candidates<'a>(docs: &'a [Planned], gold: usize, words: &[&str]) -> Vec<&'a Planned> {
    docs.iter()
        .enumerate()
        .filter(|(i, d)| *i != gold && d.topic == docs[gold].topic && shared(d, words) == words.len())
        .map(|(_, d)| d)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableConfig {
    pub docs: usize,
    pub topics: usize,
    pub queries: usize,
    pub train_queries: usize,
    /// Partial- and no-support tuples per training query.
    pub negatives_per_level: usize,
    pub seed: u64,
}

impl Default for SeparableConfig {
    fn default() -> Self {
        SeparableConfig {
            docs: 500,
            topics: 10,
            queries: 200,
            train_queries: 150,
            negatives_per_level: 2,
            seed: 0,
        }
    }
}

/// Held-out evidence triple with decreasing support.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub question: String,
    pub full: EvidenceChunk,
    pub partial: EvidenceChunk,
    pub no: EvidenceChunk,
}

#[derive(Debug, Clone)]
pub struct SeparableTask {
    pub corpus: Corpus,
    pub train_tuples: Vec<TrainingTuple>,
    pub train_queries: Vec<DevQuery>,
    pub heldout_queries: Vec<DevQuery>,
    pub heldout_triples: Vec<Triple>,
}

fn question_for(p: &Planned, rng: &mut ChaCha8Rng) -> (String, [String; 2]) {
    let picks: Vec<&String> = p.words.choose_multiple(rng, 2).collect();
    let (a, b) = (picks[0].clone(), picks[1].clone());
    (format!("Which {a} of {} has {b}?", p.name), [a, b])
}

/// A retrieval task where each query shares a unique name with exactly one
/// document. Queries target distinct documents; the first `train_queries`
/// come with full/partial/no tuples and the rest are held out.
pub fn separable_task(cfg: &SeparableConfig) -> Result<SeparableTask> {
    let mut words = Words::new(substream_seed(cfg.seed, "words"));
    let (planned, _) = plan_corpus(cfg.docs, cfg.topics, cfg.seed, &mut words, "doc");
    let corpus = Corpus::new(planned.iter().map(|p| p.doc.clone()).collect())?;
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, "queries"));
    let mut targets: Vec<usize> = (0..planned.len()).collect();
    targets.shuffle(&mut rng);
    targets.truncate(cfg.queries.min(planned.len()));

    let mut train_tuples = Vec::new();
    let mut train_queries = Vec::new();
    let mut heldout_queries = Vec::new();
    let mut heldout_triples = Vec::new();
    // Other-topic negatives cycle through the whole corpus so that every
    // document is seen during training.
    let mut no_cycle: Vec<usize> = (0..planned.len()).collect();
    no_cycle.shuffle(&mut rng);
    let mut cursor = 0;
    for (qi, &gold) in targets.iter().enumerate() {
        let p = &planned[gold];
        let (question, topic_words) = question_for(p, &mut rng);
        let tw: Vec<&str> = topic_words.iter().map(String::as_str).collect();
        let query = DevQuery {
            id: format!("q{qi:04}"),
            question: question.clone(),
            gold_ids: vec![p.doc.id.clone()],
            answers: vec![p.name.clone()],
        };
        let partials: Vec<&Planned> = partial_candidates(&planned, gold, &tw)
            .choose_multiple(&mut rng, cfg.negatives_per_level)
            .copied()
            .collect();
        let mut nos: Vec<&Planned> = Vec::with_capacity(cfg.negatives_per_level);
        while nos.len() < cfg.negatives_per_level {
            let d = &planned[no_cycle[cursor % no_cycle.len()]];
            cursor += 1;
            if d.topic != p.topic {
                nos.push(d);
            }
        }

        if qi < cfg.train_queries {
            train_tuples.push(TrainingTuple::new(&question, whole(&p.doc), SupportLevel::Full, Provenance::Benchmark)?);
            for d in &partials {
                train_tuples.push(TrainingTuple::new(&question, whole(&d.doc), SupportLevel::Partial, Provenance::Benchmark)?);
            }
            for d in &nos {
                train_tuples.push(TrainingTuple::new(&question, whole(&d.doc), SupportLevel::No, Provenance::Benchmark)?);
            }
            train_queries.push(query);
        } else {
            for d in &partials {
                for n in &nos {
                    heldout_triples.push(Triple {
                        question: question.clone(),
                        full: whole(&p.doc),
                        partial: whole(&d.doc),
                        no: whole(&n.doc),
                    });
                }
            }
            heldout_queries.push(query);
        }
    }
    Ok(SeparableTask {
        corpus,
        train_tuples,
        train_queries,
        heldout_queries,
        heldout_triples,
    })
}

/// The small corpus bundled for trying out the command line.
pub fn sample_corpus(seed: u64) -> Result<Corpus> {
    let mut words = Words::new(substream_seed(seed, "sample-words"));
    let (planned, _) = plan_corpus(50, 5, seed, &mut words, "sample");
    Corpus::new(planned.into_iter().map(|p| p.doc).collect())
}

/// Question families used by the adaptive-labeling fixture. Every question
/// is fully supported by its document; the last family pads the same content
/// with function words, which lowers the retriever's confidence.
pub const FAMILY_TEMPLATES: [&str; 3] = [
    "Which {a} of {name} has {b}?",
    "Does {name} have any {a} or {b}?",
    "Would it be that {name} is here with {a}, or would it be {b} for them?",
];

#[derive(Debug, Clone)]
pub struct AdaptiveFixture {
    pub corpus: Corpus,
    /// Labeled seed tuples used for warmup.
    pub seed_tuples: Vec<TrainingTuple>,
    pub pairs: Vec<UnlabeledPair>,
    /// Template family of each pair.
    pub families: Vec<usize>,
    /// One query per pair, gold being the pair's document.
    pub dev: Vec<DevQuery>,
}

pub fn adaptive_fixture(per_family: usize, seed_queries: usize, seed: u64) -> Result<AdaptiveFixture> {
    let mut words = Words::new(substream_seed(seed, "adaptive-words"));
    let n_docs = seed_queries + 3 * per_family;
    let (planned, _) = plan_corpus(n_docs, 6, seed, &mut words, "ad");
    let corpus = Corpus::new(planned.iter().map(|p| p.doc.clone()).collect())?;
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, "adaptive"));

    let mut seed_tuples = Vec::new();
    for gold in 0..seed_queries {
        let p = &planned[gold];
        let (question, tw) = question_for(p, &mut rng);
        let tw: Vec<&str> = tw.iter().map(String::as_str).collect();
        seed_tuples.push(TrainingTuple::new(&question, whole(&p.doc), SupportLevel::Full, Provenance::Benchmark)?);
        for d in partial_candidates(&planned, gold, &tw).into_iter().take(2) {
            seed_tuples.push(TrainingTuple::new(&question, whole(&d.doc), SupportLevel::Partial, Provenance::Benchmark)?);
        }
    }

    let mut pairs = Vec::new();
    let mut families = Vec::new();
    let mut dev = Vec::new();
    for (n, p) in planned[seed_queries..].iter().enumerate() {
        let family = n % 3;
        let picks: Vec<&String> = p.words.choose_multiple(&mut rng, 2).collect();
        let question = FAMILY_TEMPLATES[family]
            .replace("{name}", &p.name)
            .replace("{a}", picks[0])
            .replace("{b}", picks[1]);
        dev.push(DevQuery {
            id: format!("aq{n:04}"),
            question: question.clone(),
            gold_ids: vec![p.doc.id.clone()],
            answers: vec![p.name.clone()],
        });
        pairs.push(UnlabeledPair {
            question,
            doc: p.doc.clone(),
        });
        families.push(family);
    }
    Ok(AdaptiveFixture {
        corpus,
        seed_tuples,
        pairs,
        families,
        dev,
    })
}

/// A ranked passage list whose answer sits in the second third while a
/// distractor answer sits in the last third. The answer is named three times
/// and the distractor twice.
#[derive(Debug, Clone)]
pub struct MiddleFixture {
    pub question: String,
    /// Most relevant first.
    pub passages: Vec<Passage>,
    pub candidates: Vec<String>,
    pub gold: String,
}

/// `count` fixtures of nine passages with subset size three: the gold answer
/// appears in one of ranks 4 to 6, a distractor in one of ranks 7 to 9.
pub fn gold_in_middle_fixtures(count: usize, seed: u64) -> Vec<MiddleFixture> {
    let mut words = Words::new(substream_seed(seed, "middle-words"));
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, "middle"));
    (0..count)
        .map(|i| {
            let gold = words.name();
            let distractor = words.name();
            let subject = words.name();
            let gold_rank = 3 + rng.random_range(0..3);
            let distractor_rank = 6 + rng.random_range(0..3);
            let passages = (0..9)
                .map(|r| {
                    let filler: Vec<String> = (0..6).map(|_| words.fresh(3)).collect();
                    let mut text = format!("{subject} {} the {} {}.", filler[0], filler[1], filler[2]);
                    if r == gold_rank {
                        text.push_str(&format!(" {subject} was founded by {gold}. {gold} and later heirs of {gold} ran it."));
                    } else if r == distractor_rank {
                        text.push_str(&format!(" Some say {distractor} founded it, as {distractor} claimed."));
                    }
                    text.push_str(&format!(" It {} {} {}.", filler[3], filler[4], filler[5]));
                    Passage {
                        id: format!("m{i:03}-p{r}"),
                        text,
                    }
                })
                .collect();
            let candidates = if i % 2 == 0 {
                vec![gold.clone(), distractor]
            } else {
                vec![distractor, gold.clone()]
            };
            MiddleFixture {
                question: format!("Who founded {subject}?"),
                passages,
                candidates,
                gold,
            }
        })
        .collect()
}

/// Bundled fixture files under `dir`.
/// Writes the bundled fixture files under `dir`.
pub fn write_fixtures(dir: &Path) -> Result<()> {
    use crate::data::write_jsonl;
    use serde_json::json;
    crate::data::save_corpus(&sample_corpus(0)?, &dir.join("sample_corpus.jsonl"))?;

    let task = separable_task(&SeparableConfig::default())?;
    let sep = dir.join("separable");
    save_corpus(&task.corpus, &sep.join("corpus.jsonl"))?;
    save_tuples(&task.train_tuples, &sep.join("train_tuples.jsonl"))?;
    write_jsonl(&sep.join("train_queries.jsonl"), &task.train_queries)?;
    write_jsonl(&sep.join("dev_queries.jsonl"), &task.heldout_queries)?;
    let demos: String = task.train_queries.iter().take(20).map(|q| format!("{}\n", q.question)).collect();
    std::fs::write(sep.join("demonstrations.txt"), demos).map_err(|e| crate::Error::io(sep.join("demonstrations.txt"), e))?;
    // each held-out question with its own answer and the next query's as a distractor
    let n = task.heldout_queries.len();
    let questions = task.heldout_queries.iter().enumerate().map(|(i, q)| {
        let other = &task.heldout_queries[(i + 1) % n].answers[0];
        let candidates = if i % 2 == 0 {
            vec![q.answers[0].clone(), other.clone()]
        } else {
            vec![other.clone(), q.answers[0].clone()]
        };
        json!({ "id": q.id, "question": q.question, "candidates": candidates, "answers": q.answers })
    });
    write_jsonl(&sep.join("answer_questions.jsonl"), questions)?;
    write_jsonl(
        &sep.join("pairs.jsonl"),
        task.train_queries.iter().map(|q| json!({ "question": q.question, "doc_id": q.gold_ids[0] })),
    )?;

    let ad = adaptive_fixture(30, 40, 6)?;
    let adir = dir.join("adaptive");
    save_corpus(&ad.corpus, &adir.join("corpus.jsonl"))?;
    save_tuples(&ad.seed_tuples, &adir.join("seed_tuples.jsonl"))?;
    write_jsonl(
        &adir.join("pairs.jsonl"),
        ad.pairs.iter().map(|p| json!({ "question": p.question, "doc_id": p.doc.id })),
    )?;
    write_jsonl(&adir.join("dev_queries.jsonl"), &ad.dev)?;
    Ok(())
}
