//! Run configuration: one TOML document with a section per module, merged
//! over defaults and then `--set` overrides. Every leaf key remembers where
//! its value came from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::cluster::ClusteringConfig;
use crate::data::ChunkingPolicy;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::inference::{AnswerMode, MockReaderConfig, OrderingPlan};
use crate::labeler::TransportConfig;
use crate::text::substream_seed;
use crate::training::{AdaptiveConfig, LossConfig, TrainSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Reports, manifests and traces go here.
    pub run_dir: PathBuf,
    /// `ingest` input: a corpus JSONL file or a directory of `.txt` files.
    pub raw: Option<PathBuf>,
    pub corpus: PathBuf,
    /// `generate-data` output.
    pub tuples: PathBuf,
    /// `train` inputs.
    pub train_tuples: Vec<PathBuf>,
    /// Held-out queries: `{"id", "question", "gold_ids", "answers"}` per line.
    pub dev: Option<PathBuf>,
    /// Example questions for `generate-data`, one per line.
    pub demonstrations: Option<PathBuf>,
    /// Unlabeled `{"question", "doc_id"}` pairs for `adaptive-label`.
    pub pairs: Option<PathBuf>,
    /// `adaptive-label` output.
    pub adaptive_tuples: PathBuf,
    /// Starting point for `train`; random when absent.
    pub init_checkpoint: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// Chunk scorer for `answer` in chunk mode.
    pub reranker: Option<PathBuf>,
    pub index: PathBuf,
    /// `answer` input: `{"id", "question", "candidates", "answers"}` per line.
    pub questions: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            run_dir: "run".into(),
            raw: None,
            corpus: "run/corpus.jsonl".into(),
            tuples: "run/tuples.jsonl".into(),
            train_tuples: vec!["run/tuples.jsonl".into()],
            dev: None,
            demonstrations: None,
            pairs: None,
            adaptive_tuples: "run/adaptive_tuples.jsonl".into(),
            init_checkpoint: None,
            checkpoint: "run/encoder.ckpt".into(),
            reranker: None,
            index: "run/index.bin".into(),
            questions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub backend: Backend,
    /// Directory with `question.txt`, `evidence.txt` and `score.txt`.
    pub prompts_dir: Option<PathBuf>,
    /// Shared by the HTTP oracle and the HTTP reader.
    pub http: TransportConfig,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            backend: Backend::Mock,
            prompts_dir: None,
            http: TransportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderSection {
    pub backend: Backend,
    pub mode: AnswerMode,
    pub mock: MockReaderConfig,
}

impl Default for ReaderSection {
    fn default() -> Self {
        ReaderSection {
            backend: Backend::Mock,
            mode: AnswerMode::Docs,
            mock: MockReaderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub negatives_per_question: usize,
    pub max_in_flight: usize,
    /// Demonstrations sampled from each question cluster.
    pub demonstrations_per_cluster: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            negatives_per_question: 4,
            max_in_flight: 4,
            demonstrations_per_cluster: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cutoffs: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: vec![1, 5, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; module seeds derive from it unless set explicitly.
    pub seed: u64,
    pub paths: PathsConfig,
    pub chunking: ChunkingPolicy,
    pub clustering: ClusteringConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub schedule: TrainSchedule,
    pub adaptive: AdaptiveConfig,
    pub plan: OrderingPlan,
    pub generate: GenerateSection,
    pub oracle: OracleSection,
    pub reader: ReaderSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Default,
    File,
    Flag,
}

/// Tables replaced as a whole rather than merged key by key.
const ATOMIC: &[&str] = &["adaptive.threshold"];

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub provenance: BTreeMap<String, Origin>,
}

impl LoadedConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.provenance.get(key).copied().unwrap_or(Origin::Default)
    }

    /// Path as written relative to the base directory when possible, for
    /// manifests that must not depend on where the run lives.
    pub fn display(&self, path: &Path) -> String {
        path.strip_prefix(&self.base_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

fn parse_override(spec: &str) -> std::result::Result<(Vec<String>, Value), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {spec:?} is not key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(format!("override {spec:?} has an empty key segment"));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()));
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("{} is not a section", path.join(".")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn is_atomic(path: &str) -> bool {
    ATOMIC.contains(&path)
}

/// Leaf keys of `user`, descending into tables that are sections in
/// `defaults`.
fn leaves(user: &Table, defaults: Option<&Table>, prefix: &str, out: &mut Vec<(String, Value)>) {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let default_section = defaults.and_then(|d| d.get(k)).and_then(Value::as_table);
        match (v, default_section) {
            (Value::Table(t), Some(d)) if !is_atomic(&path) => leaves(t, Some(d), &path, out),
            _ => out.push((path, v.clone())),
        }
    }
}

fn merge(base: &mut Table, over: &Table, prefix: &str) {
    for (k, v) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) if !is_atomic(&path) => merge(b, o, &path),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn split_path(path: &str) -> Vec<String> {
    path.split('.').map(str::to_owned).collect()
}

fn semantic_errors(c: &RunConfig) -> Vec<String> {
    let mut errs = Vec::new();
    let mut push = |section: &str, r: Result<()>| {
        if let Err(e) = r {
            errs.push(format!("{section}: {e}"));
        }
    };
    push("chunking", c.chunking.validate());
    push("clustering", c.clustering.validate());
    push("loss", c.loss.validate());
    push("schedule", c.schedule.validate());
    push("adaptive", c.adaptive.validate());
    push("plan", c.plan.validate());
    if c.encoder.feature_dim == 0 || c.encoder.dim == 0 {
        errs.push("encoder: feature_dim and dim must be positive".into());
    }
    if c.generate.max_in_flight == 0 {
        errs.push("generate.max_in_flight: must be positive".into());
    }
    if c.oracle.http.max_in_flight == 0 {
        errs.push("oracle.http.max_in_flight: must be positive".into());
    }
    if c.eval.cutoffs.is_empty() || c.eval.cutoffs.contains(&0) {
        errs.push("eval.cutoffs: need at least one cutoff, all positive".into());
    }
    if !(c.reader.mock.base >= 0.0 && c.reader.mock.bonus >= 0.0 && c.reader.mock.jitter >= 0.0) {
        errs.push("reader.mock: base, bonus and jitter must be non-negative".into());
    }
    errs
}

/// Reads `path` (when given), applies `overrides` (`section.key=value`),
/// checks every key and value and derives module seeds. All problems are
/// reported together in one [`Error::Config`].
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig> {
    let (cfg, errors) = load_lenient(path, overrides)?;
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errors))
    }
}

/// Like [`load`], but keys that fail to parse are left at their defaults and
/// reported alongside the config, so callers can add their own checks to
/// the same error list. Fails outright only when the file is unreadable.
pub fn load_lenient(path: Option<&Path>, overrides: &[String]) -> Result<(LoadedConfig, Vec<String>)> {
    let defaults = Table::try_from(RunConfig::default()).map_err(|e| Error::Invariant(format!("default config: {e}")))?;
    let mut errors = Vec::new();

    let (file_table, base_dir) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?;
            let table = text
                .parse::<Table>()
                .map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir })
        }
        None => (Table::new(), PathBuf::from(".")),
    };

    let mut provenance = BTreeMap::new();
    let mut file_leaves = Vec::new();
    leaves(&file_table, Some(&defaults), "", &mut file_leaves);
    for (k, _) in &file_leaves {
        provenance.insert(k.clone(), Origin::File);
    }

    let mut user = file_table;
    for spec in overrides {
        match parse_override(spec) {
            Ok((p, v)) => {
                let key = p.join(".");
                match set_path(&mut user, &p, v) {
                    Ok(()) => {
                        provenance.retain(|k, _| !(k == &key || k.starts_with(&format!("{key}."))));
                        provenance.insert(key, Origin::Flag);
                    }
                    Err(e) => errors.push(e),
                }
            }
            Err(e) => errors.push(e),
        }
    }

    // Each leaf is checked on its own against the defaults; only the valid
    // ones are kept.
    let mut user_leaves = Vec::new();
    leaves(&user, Some(&defaults), "", &mut user_leaves);
    let mut valid = Table::new();
    for (key, value) in user_leaves {
        let mut single = Table::new();
        if let Err(e) = set_path(&mut single, &split_path(&key), value) {
            errors.push(e);
            provenance.remove(&key);
            continue;
        }
        let mut probe = defaults.clone();
        merge(&mut probe, &single, "");
        match RunConfig::deserialize(Value::Table(probe)) {
            Ok(_) => merge(&mut valid, &single, ""),
            Err(e) => {
                errors.push(format!("{key}: {}", e.message().trim()));
                provenance.remove(&key);
            }
        }
    }

    let mut merged = defaults.clone();
    merge(&mut merged, &valid, "");
    let mut config = match RunConfig::deserialize(Value::Table(merged)) {
        Ok(c) => c,
        Err(e) => {
            errors.push(e.message().trim().to_owned());
            RunConfig::default()
        }
    };
    errors.extend(semantic_errors(&config));

    let mut default_leaves = Vec::new();
    leaves(&defaults, Some(&defaults), "", &mut default_leaves);
    for (k, _) in default_leaves {
        provenance.entry(k).or_insert(Origin::Default);
    }

    let global = config.seed;
    let derived = |name: &str| substream_seed(global, name);
    let is_default = |k: &str| provenance.get(k).is_none_or(|o| *o == Origin::Default);
    if is_default("schedule.seed") {
        config.schedule.seed = derived("train");
    }
    if is_default("clustering.seed") {
        config.clustering.seed = derived("clustering");
    }
    if is_default("plan.seed") {
        config.plan.seed = derived("plan");
    }
    if is_default("reader.mock.seed") {
        config.reader.mock.seed = derived("reader");
    }

    for (k, o) in &provenance {
        log::debug!("config {k}: {o:?}");
    }
    Ok((
        LoadedConfig {
            config,
            base_dir,
            provenance,
        },
        errors,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("relabel.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_and_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "seed = 3\n[schedule]\nlr = 0.5\n");
        let c = load(Some(&p), &["schedule.batch_size=8".into()]).unwrap();
        assert_eq!(c.config.schedule.lr, 0.5);
        assert_eq!(c.config.schedule.batch_size, 8);
        assert_eq!(c.origin("schedule.lr"), Origin::File);
        assert_eq!(c.origin("schedule.batch_size"), Origin::Flag);
        assert_eq!(c.origin("loss.temperature"), Origin::Default);
        assert_eq!(c.config.schedule.seed, substream_seed(3, "train"));
    }

    #[test]
    fn explicit_module_seed_wins() {
        let c = load(None, &["schedule.seed=11".into()]).unwrap();
        assert_eq!(c.config.schedule.seed, 11);
    }

    #[test]
    fn all_errors_reported_together() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "[schedule]\nlr = \"fast\"\nbogus = 1\n[loss]\ntemperature = 0.0\n[nothing]\nx = 1\n",
        );
        let Err(Error::Config(errs)) = load(Some(&p), &["plan.k=nine".into()]) else {
            panic!("expected config error")
        };
        let joined = errs.join("\n");
        for needle in ["schedule.lr", "schedule.bogus", "nothing", "plan.k"] {
            assert!(joined.contains(needle), "{needle} missing from {joined}");
        }
    }

    #[test]
    fn semantic_errors_follow_type_errors() {
        let Err(Error::Config(errs)) = load(None, &["loss.temperature=0".into(), "clustering.k=0".into()]) else {
            panic!("expected config error")
        };
        assert_eq!(errs.len(), 2, "{errs:?}");
    }

    #[test]
    fn threshold_replaced_whole() {
        let c = load(None, &["adaptive.threshold={ absolute = 0.5 }".into()]).unwrap();
        assert_eq!(c.config.adaptive.threshold, crate::training::ThresholdPolicy::Absolute(0.5));
    }

    #[test]
    fn bare_words_become_strings() {
        let c = load(None, &["reader.mode=chunks".into()]).unwrap();
        assert_eq!(c.config.reader.mode, AnswerMode::Chunks);
    }
}
