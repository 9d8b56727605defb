use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Backend, LoadedConfig};
use super::manifest::{ensure_parent, read_manifests, write_json, ManifestBuilder};
use crate::cluster::{cluster_questions, select_diverse_demonstrations, write_cluster_report};
use crate::data::{
    chunk_document, load_corpus, load_tuples, read_jsonl, save_corpus, save_tuples, word_count, Corpus, Document,
    Source,
};
use crate::encoder::{load_checkpoint, save_checkpoint, EncoderParams, HashedTextEmbedder, Side};
use crate::error::{Error, Result};
use crate::index::{recall_at_k, span_recall_at_k, RetrievalResult, VectorIndex};
use crate::inference::{exact_match, LlmReader, MockReader, Pipeline, Reader};
use crate::labeler::{generate_tuples, ChatTransport, GenerationConfig, LabelerOracle, LlmOracle, MockOracle, PromptSet};
use crate::text::substream_seed;
use crate::training::{adaptive_round, load_dev_queries, train, write_metrics_csv, UnlabeledPair};

/// Commands that can consume oracle calls, whose counts feed the cumulative
/// column of the training metrics.
const ORACLE_COMMANDS: &[&str] = &["generate-data", "adaptive-label"];

struct Paths<'a> {
    cfg: &'a LoadedConfig,
    missing: Vec<String>,
}

impl<'a> Paths<'a> {
    fn new(cfg: &'a LoadedConfig, errors: Vec<String>) -> Self {
        Paths { cfg, missing: errors }
    }

    /// An input that must exist.
    fn input(&mut self, key: &str, path: &Path) -> PathBuf {
        let p = self.cfg.resolve(path);
        if !p.exists() {
            self.missing.push(format!("paths.{key}: {} does not exist", self.cfg.display(&p)));
        }
        p
    }

    /// An optional input that must be set and exist.
    fn required(&mut self, key: &str, path: Option<&PathBuf>) -> PathBuf {
        match path {
            Some(p) => self.input(key, p),
            None => {
                self.missing.push(format!("paths.{key}: required by this command"));
                PathBuf::new()
            }
        }
    }

    fn optional(&mut self, key: &str, path: Option<&PathBuf>) -> Option<PathBuf> {
        path.map(|p| self.input(key, p))
    }

    fn check(self) -> Result<()> {
        if self.missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(self.missing))
        }
    }
}

fn reports(cfg: &LoadedConfig) -> PathBuf {
    cfg.resolve(&cfg.config.paths.run_dir).join("reports")
}

fn traces(cfg: &LoadedConfig) -> PathBuf {
    cfg.resolve(&cfg.config.paths.run_dir).join("traces")
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn build_oracle(cfg: &LoadedConfig) -> Result<Box<dyn LabelerOracle>> {
    let c = &cfg.config;
    match c.oracle.backend {
        Backend::Mock => Ok(Box::new(
            MockOracle::new(substream_seed(c.seed, "oracle"), c.chunking)
                .with_budget(c.oracle.http.budget, c.oracle.http.cost_per_call),
        )),
        Backend::Http => {
            let prompts = match &c.oracle.prompts_dir {
                Some(d) => PromptSet::load_dir(&cfg.resolve(d))?,
                None => PromptSet::default(),
            };
            let mut transport = c.oracle.http.clone();
            transport.audit_path = transport.audit_path.map(|p| cfg.resolve(&p));
            Ok(Box::new(LlmOracle::new(ChatTransport::new(transport)?, prompts, c.chunking)))
        }
    }
}

fn build_reader(cfg: &LoadedConfig) -> Result<Box<dyn Reader>> {
    let c = &cfg.config;
    match c.reader.backend {
        Backend::Mock => Ok(Box::new(MockReader::new(c.reader.mock.clone()))),
        Backend::Http => {
            let mut transport = c.oracle.http.clone();
            transport.audit_path = transport.audit_path.map(|p| cfg.resolve(&p));
            Ok(Box::new(LlmReader::new(ChatTransport::new(transport)?)))
        }
    }
}

fn exhausted(oracle: &dyn LabelerOracle, cfg_budget: Option<u64>) -> Error {
    let used = oracle.usage().calls;
    Error::BudgetExhausted {
        used,
        limit: cfg_budget.unwrap_or(used),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

/// Reads a corpus JSONL file, or every `.txt` file in a directory (id = file
/// stem), in name order.
fn read_raw(path: &Path) -> Result<Corpus> {
    if !path.is_dir() {
        return load_corpus(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    let mut corpus = Corpus::new(Vec::new())?;
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        let text = text.trim();
        if text.is_empty() {
            log::warn!("skipping empty file {}", f.display());
            continue;
        }
        let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        corpus.push(Document {
            id,
            title: String::new(),
            text: text.to_owned(),
            source: Source::Other,
        })?;
    }
    Ok(corpus)
}

pub fn ingest(cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    let c = &cfg.config;
    let mut p = Paths::new(cfg, errors);
    let raw = p.required("raw", c.paths.raw.as_ref());
    p.check()?;
    let corpus = read_raw(&raw)?;
    if corpus.is_empty() {
        return Err(Error::InvalidData(format!("no documents in {}", cfg.display(&raw))));
    }
    let out = cfg.resolve(&c.paths.corpus);
    save_corpus(&corpus, &out)?;

    let words: Vec<usize> = corpus.iter().map(|d| word_count(&d.text)).collect();
    let chunks: usize = corpus.iter().map(|d| chunk_document(d, &c.chunking).len()).sum();
    let stats = json!({
        "documents": corpus.len(),
        "words": words.iter().sum::<usize>(),
        "min_words": words.iter().min(),
        "max_words": words.iter().max(),
        "mean_words": words.iter().sum::<usize>() as f64 / words.len() as f64,
        "chunks": chunks,
    });
    let stats_path = reports(cfg).join("ingest_stats.json");
    write_json(&stats_path, &stats)?;

    let mut m = ManifestBuilder::new(cfg, "ingest");
    m.input(&raw)?;
    m.output(&out)?;
    m.output(&stats_path)?;
    m.finish(0, 0.0, "ok", stats)?;
    println!("ingested {} documents into {}", corpus.len(), cfg.display(&out));
    Ok(())
}

pub fn generate_data(cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    let c = &cfg.config;
    let mut p = Paths::new(cfg, errors);
    let corpus_path = p.input("corpus", &c.paths.corpus);
    let demos_path = p.optional("demonstrations", c.paths.demonstrations.as_ref());
    p.check()?;
    let corpus = load_corpus(&corpus_path)?;
    let mut m = ManifestBuilder::new(cfg, "generate-data");
    m.input(&corpus_path)?;

    let embedder = HashedTextEmbedder::default();
    let mut demos = Vec::new();
    if let Some(dp) = &demos_path {
        m.input(dp)?;
        let questions = read_lines(dp)?;
        if !questions.is_empty() {
            let (_, clustering) = cluster_questions(&questions, &embedder, &c.clustering)?;
            let report = reports(cfg).join("demo_clusters.jsonl");
            write_cluster_report(&report, &clustering.clusters, &questions)?;
            m.output(&report)?;
            demos = select_diverse_demonstrations(
                &clustering.clusters,
                &questions,
                c.generate.demonstrations_per_cluster,
                substream_seed(c.seed, "demonstrations"),
            )?;
        }
    }

    let oracle = build_oracle(cfg)?;
    let pool: Vec<_> = corpus.iter().flat_map(|d| chunk_document(d, &c.chunking)).collect();
    let outcome = generate_tuples(
        oracle.as_ref(),
        corpus.docs(),
        &demos,
        &pool,
        &embedder,
        &GenerationConfig {
            negatives_per_question: c.generate.negatives_per_question,
            max_in_flight: c.generate.max_in_flight,
        },
    )?;
    let out = cfg.resolve(&c.paths.tuples);
    save_tuples(&outcome.tuples, &out)?;
    m.output(&out)?;

    let usage = oracle.usage();
    let status = if outcome.budget_exhausted { "budget_exhausted" } else { "ok" };
    m.finish(
        usage.calls,
        usage.cost,
        status,
        json!({
            "tuples": outcome.tuples.len(),
            "skipped_docs": outcome.skipped_docs,
            "demonstrations": demos.len(),
            "parse_failures": usage.parse_failures,
        }),
    )?;
    println!(
        "wrote {} tuples to {} ({} oracle calls)",
        outcome.tuples.len(),
        cfg.display(&out),
        usage.calls
    );
    if outcome.budget_exhausted {
        return Err(exhausted(oracle.as_ref(), c.oracle.http.budget));
    }
    Ok(())
}

fn prior_oracle_calls(cfg: &LoadedConfig) -> Result<u64> {
    Ok(read_manifests(cfg)?
        .iter()
        .filter(|m| ORACLE_COMMANDS.contains(&m.command.as_str()))
        .map(|m| m.oracle_calls)
        .sum())
}

fn config_snapshot_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    checkpoint.with_file_name(name)
}

pub fn train_cmd(cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    let c = &cfg.config;
    let mut p = Paths::new(cfg, errors);
    let corpus_path = p.input("corpus", &c.paths.corpus);
    if c.paths.train_tuples.is_empty() {
        p.missing.push("paths.train_tuples: at least one tuple file is required".into());
    }
    let tuple_paths: Vec<PathBuf> = c.paths.train_tuples.iter().map(|t| p.input("train_tuples", t)).collect();
    let dev_path = p.optional("dev", c.paths.dev.as_ref());
    let init_path = p.optional("init_checkpoint", c.paths.init_checkpoint.as_ref());
    p.check()?;

    let mut m = ManifestBuilder::new(cfg, "train");
    let corpus = load_corpus(&corpus_path)?;
    m.input(&corpus_path)?;
    let mut tuples = Vec::new();
    for t in &tuple_paths {
        tuples.extend(load_tuples(t)?);
        m.input(t)?;
    }
    let dev = match &dev_path {
        Some(d) => {
            m.input(d)?;
            Some(load_dev_queries(d)?)
        }
        None => None,
    };
    let init = match &init_path {
        Some(i) => {
            m.input(i)?;
            load_checkpoint(i)?
        }
        None => EncoderParams::random(c.encoder, substream_seed(c.seed, "encoder"))?,
    };

    let outcome = train(&corpus, &tuples, dev.as_deref(), init, &c.schedule, &c.loss)?;
    let ckpt = cfg.resolve(&c.paths.checkpoint);
    ensure_parent(&ckpt)?;
    save_checkpoint(&outcome.params, &ckpt)?;
    m.output(&ckpt)?;
    let snapshot = config_snapshot_path(&ckpt);
    write_json(&snapshot, c)?;
    m.output(&snapshot)?;

    let metrics = reports(cfg).join("metrics.csv");
    ensure_parent(&metrics)?;
    write_metrics_csv(&outcome.history, prior_oracle_calls(cfg)?, &metrics)?;
    m.output(&metrics)?;

    let last = outcome.history.last();
    m.finish(
        0,
        0.0,
        "ok",
        json!({
            "fingerprint": outcome.params.fingerprint(),
            "steps": outcome.steps,
            "refreshes": outcome.refreshes,
            "tuples": tuples.len(),
            "flagged_questions": outcome.flagged.len(),
            "questions_without_positive": outcome.without_positive.len(),
            "final_loss_list": last.map(|h| h.loss_list),
            "final_loss_pair": last.map(|h| h.loss_pair),
            "final_dev_recall": last.map(|h| to_json(&h.dev_recall)),
        }),
    )?;
    println!(
        "trained {} steps; checkpoint {} ({})",
        outcome.steps,
        cfg.display(&ckpt),
        outcome.params.fingerprint()
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    question: String,
    doc_id: String,
}

pub fn adaptive_label(cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    let c = &cfg.config;
    let mut p = Paths::new(cfg, errors);
    let corpus_path = p.input("corpus", &c.paths.corpus);
    let ckpt_path = p.input("checkpoint", &c.paths.checkpoint);
    let pairs_path = p.required("pairs", c.paths.pairs.as_ref());
    p.check()?;

    let mut m = ManifestBuilder::new(cfg, "adaptive-label");
    for i in [&corpus_path, &ckpt_path, &pairs_path] {
        m.input(i)?;
    }
    let corpus = load_corpus(&corpus_path)?;
    let params = load_checkpoint(&ckpt_path)?;
    let pairs = read_jsonl(&pairs_path, |line, n| {
        let r: PairRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: n,
            message: e.to_string(),
        })?;
        let doc = corpus
            .get(&r.doc_id)
            .ok_or_else(|| Error::Malformed {
                line: n,
                message: format!("unknown document {:?}", r.doc_id),
            })?
            .clone();
        Ok(UnlabeledPair { question: r.question, doc })
    })?;
    if pairs.is_empty() {
        return Err(Error::InvalidData("no question pairs".into()));
    }
    let questions: Vec<String> = pairs.iter().map(|p| p.question.clone()).collect();
    let embedder = HashedTextEmbedder::default();
    let (_, clustering) = cluster_questions(&questions, &embedder, &c.clustering)?;
    let mut clusters = clustering.clusters;

    let oracle = build_oracle(cfg)?;
    let outcome = adaptive_round(&params, &pairs, &mut clusters, &c.adaptive, oracle.as_ref(), &c.chunking, &embedder)?;

    let out = cfg.resolve(&c.paths.adaptive_tuples);
    let mut tuples = outcome.self_labeled.clone();
    tuples.extend(outcome.oracle_labeled.iter().cloned());
    save_tuples(&tuples, &out)?;
    m.output(&out)?;
    let cluster_report = reports(cfg).join("adaptive_clusters.jsonl");
    write_cluster_report(&cluster_report, &clusters, &questions)?;
    m.output(&cluster_report)?;
    let report = reports(cfg).join("adaptive_report.json");
    write_json(&report, &outcome.report)?;
    m.output(&report)?;

    let usage = oracle.usage();
    let status = if outcome.report.budget_exhausted { "budget_exhausted" } else { "ok" };
    m.finish(usage.calls, usage.cost, status, to_json(&outcome.report))?;
    println!(
        "self-labeled {}, oracle-labeled {} tuples ({} oracle calls)",
        outcome.self_labeled.len(),
        outcome.oracle_labeled.len(),
        usage.calls
    );
    if outcome.report.budget_exhausted {
        return Err(Error::BudgetExhausted {
            used: outcome.report.oracle_calls,
            limit: c.adaptive.round_budget.unwrap_or(outcome.report.oracle_calls),
        });
    }
    Ok(())
}

/// Build time recorded in the index header: `SOURCE_DATE_EPOCH` when set,
/// else zero, so rebuilds are byte-identical.
fn build_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

pub fn build_index(cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    let c = &cfg.config;
    let mut p = Paths::new(cfg, errors);
    let corpus_path = p.input("corpus", &c.paths.corpus);
    let ckpt_path = p.input("checkpoint", &c.paths.checkpoint);
    p.check()?;

    let mut m = ManifestBuilder::new(cfg, "build-index");
    m.input(&corpus_path)?;
    m.input(&ckpt_path)?;
    let corpus = load_corpus(&corpus_path)?;
    let params = load_checkpoint(&ckpt_path)?;
    let rows = corpus
        .iter()
        .map(|d| Ok((d.id.clone(), params.encode(&d.text, Side::Document)?)))
        .collect::<Result<Vec<_>>>()?;
    let index = VectorIndex::build(rows, params.fingerprint())?.with_build_time(build_time());
    let out = cfg.resolve(&c.paths.index);
    ensure_parent(&out)?;
    index.save(&out)?;
    m.output(&out)?;
    m.finish(0, 0.0, "ok", json!({ "entries": index.len(), "dim": index.dim() }))?;
    println!("indexed {} documents into {}", index.len(), cfg.display(&out));
    Ok(())
}

fn checked_index(index_path: &Path, params: &EncoderParams) -> Result<VectorIndex> {
    let index = VectorIndex::load(index_path)?;
    if index.checkpoint_hash() != params.fingerprint() {
        return Err(Error::InvalidData(format!(
            "index was built with encoder {} but the checkpoint is {}",
            index.checkpoint_hash(),
            params.fingerprint()
        )));
    }
    Ok(index)
}

pub fn eval_retrieval(cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    let c = &cfg.config;
    let mut p = Paths::new(cfg, errors);
    let corpus_path = p.input("corpus", &c.paths.corpus);
    let ckpt_path = p.input("checkpoint", &c.paths.checkpoint);
    let index_path = p.input("index", &c.paths.index);
    let dev_path = p.required("dev", c.paths.dev.as_ref());
    p.check()?;

    let mut m = ManifestBuilder::new(cfg, "eval-retrieval");
    for i in [&corpus_path, &ckpt_path, &index_path, &dev_path] {
        m.input(i)?;
    }
    let corpus = load_corpus(&corpus_path)?;
    let params = load_checkpoint(&ckpt_path)?;
    let index = checked_index(&index_path, &params)?;
    let queries = load_dev_queries(&dev_path)?;
    let depth = c.eval.cutoffs.iter().copied().max().unwrap_or(1);
    let results = queries
        .iter()
        .map(|q| index.search(&q.id, &params.encode(&q.question, Side::Query)?, depth))
        .collect::<Result<Vec<RetrievalResult>>>()?;

    let gold: BTreeMap<String, Vec<String>> = queries.iter().map(|q| (q.id.clone(), q.gold_ids.clone())).collect();
    let answers: BTreeMap<String, Vec<String>> = queries.iter().map(|q| (q.id.clone(), q.answers.clone())).collect();
    let text_of = |id: &str| corpus.get(id).map(|d| d.text.clone());
    let with_gold = queries.iter().any(|q| !q.gold_ids.is_empty());
    let with_answers = queries.iter().any(|q| !q.answers.is_empty());
    let mut recall = BTreeMap::new();
    let mut span = BTreeMap::new();
    for &k in &c.eval.cutoffs {
        if with_gold {
            recall.insert(k.to_string(), recall_at_k(&results, &gold, k));
        }
        if with_answers {
            span.insert(k.to_string(), span_recall_at_k(&results, &answers, &text_of, k));
        }
    }
    let metrics = json!({
        "queries": queries.len(),
        "recall": recall,
        "span_recall": span,
    });
    let metrics_path = reports(cfg).join("retrieval_metrics.json");
    write_json(&metrics_path, &metrics)?;
    m.output(&metrics_path)?;
    let trace_path = traces(cfg).join("retrieval.jsonl");
    crate::data::write_jsonl(&trace_path, &results)?;
    m.output(&trace_path)?;
    m.finish(0, 0.0, "ok", metrics.clone())?;
    println!("{}", serde_json::to_string(&metrics).unwrap_or_default());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionRecord {
    #[serde(default)]
    id: Option<String>,
    question: String,
    candidates: Vec<String>,
    #[serde(default)]
    answers: Vec<String>,
}

pub fn answer(cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    let c = &cfg.config;
    let mut p = Paths::new(cfg, errors);
    let corpus_path = p.input("corpus", &c.paths.corpus);
    let ckpt_path = p.input("checkpoint", &c.paths.checkpoint);
    let index_path = p.input("index", &c.paths.index);
    let reranker_path = p.optional("reranker", c.paths.reranker.as_ref());
    let questions_path = p.required("questions", c.paths.questions.as_ref());
    p.check()?;

    let mut m = ManifestBuilder::new(cfg, "answer");
    for i in [&corpus_path, &ckpt_path, &index_path, &questions_path] {
        m.input(i)?;
    }
    let corpus = load_corpus(&corpus_path)?;
    let params = load_checkpoint(&ckpt_path)?;
    let index = checked_index(&index_path, &params)?;
    let reranker = match &reranker_path {
        Some(r) => {
            m.input(r)?;
            Some(load_checkpoint(r)?)
        }
        None => None,
    };
    let questions = read_jsonl(&questions_path, |line, n| {
        serde_json::from_str::<QuestionRecord>(line).map_err(|e| Error::Malformed {
            line: n,
            message: e.to_string(),
        })
    })?;
    let reader = build_reader(cfg)?;
    let pipeline = Pipeline {
        index: &index,
        corpus: &corpus,
        encoder: &params,
        reranker: reranker.as_ref(),
        plan: &c.plan,
        chunking: &c.chunking,
        reader: reader.as_ref(),
        mode: c.reader.mode,
    };

    let mut rows = Vec::with_capacity(questions.len());
    let (mut graded, mut correct, mut failed_perms) = (0usize, 0usize, 0usize);
    for (i, q) in questions.iter().enumerate() {
        let trace = pipeline.answer(&q.question, &q.candidates)?;
        let prediction = trace.ensemble.best().map(|b| b.answer.clone()).unwrap_or_default();
        let hit = (!q.answers.is_empty()).then(|| exact_match(&prediction, &q.answers));
        if let Some(h) = hit {
            graded += 1;
            correct += usize::from(h);
        }
        failed_perms += trace.ensemble.failed_permutations.len();
        rows.push(json!({
            "id": q.id.clone().unwrap_or_else(|| format!("q{i}")),
            "prediction": prediction,
            "correct": hit,
            "trace": trace,
        }));
    }
    let trace_path = traces(cfg).join("answers.jsonl");
    crate::data::write_jsonl(&trace_path, &rows)?;
    m.output(&trace_path)?;
    let summary = json!({
        "questions": questions.len(),
        "graded": graded,
        "exact_match": if graded > 0 { Some(correct as f64 / graded as f64) } else { None },
        "failed_permutations": failed_perms,
    });
    let summary_path = reports(cfg).join("answer_summary.json");
    write_json(&summary_path, &summary)?;
    m.output(&summary_path)?;
    m.finish(0, 0.0, "ok", summary.clone())?;
    println!("{}", serde_json::to_string(&summary).unwrap_or_default());
    Ok(())
}

/// Pipeline order, used to lay out the run summary.
const PIPELINE: &[&str] = &[
    "ingest",
    "generate-data",
    "train",
    "adaptive-label",
    "build-index",
    "eval-retrieval",
    "answer",
];

pub fn report(cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    Paths::new(cfg, errors).check()?;
    let mut manifests = read_manifests(cfg)?;
    manifests.sort_by_key(|m| PIPELINE.iter().position(|c| *c == m.command).unwrap_or(PIPELINE.len()));
    let mut commands = BTreeMap::new();
    let mut md = String::from("# Run summary\n\n| command | status | oracle calls | oracle cost | outputs |\n|---|---|---|---|---|\n");
    let (mut calls, mut cost) = (0u64, 0.0f64);
    for man in manifests.iter().filter(|m| m.command != "report") {
        calls += man.oracle_calls;
        cost += man.oracle_cost;
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.4} | {} |",
            man.command,
            man.status,
            man.oracle_calls,
            man.oracle_cost,
            man.outputs.len()
        );
        commands.insert(
            man.command.clone(),
            json!({
                "status": man.status,
                "oracle_calls": man.oracle_calls,
                "oracle_cost": man.oracle_cost,
                "outputs": man.outputs,
                "summary": man.summary,
            }),
        );
    }
    let _ = writeln!(md, "\nTotal oracle calls: {calls} (cost {cost:.4})");
    for man in manifests.iter().filter(|m| m.command != "report" && !m.summary.is_null()) {
        let pretty = serde_json::to_string_pretty(&man.summary).unwrap_or_default();
        let _ = writeln!(md, "\n## {}\n\n```json\n{pretty}\n```", man.command);
    }
    let summary = json!({
        "commands": commands,
        "oracle_calls": calls,
        "oracle_cost": cost,
    });
    let json_path = reports(cfg).join("summary.json");
    write_json(&json_path, &summary)?;
    let md_path = reports(cfg).join("summary.md");
    std::fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;

    let mut m = ManifestBuilder::new(cfg, "report");
    for man in manifests.iter().filter(|m| m.command != "report") {
        m.input(&super::manifest::manifest_dir(cfg).join(format!("{}.json", man.command)))?;
    }
    m.output(&json_path)?;
    m.output(&md_path)?;
    m.finish(0, 0.0, "ok", serde_json::Value::Null)?;
    println!("summarized {} commands into {}", commands.len(), cfg.display(&md_path));
    Ok(())
}
