#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relabel::data::SupportLevel;
use relabel::encoder::{forward_backward, forward_loss, EncoderConfig, EncoderParams, Side};
use relabel::training::{Candidate, CandidateSet, LossConfig};

const VOCAB: &[&str] = &[
    "amber", "basin", "cedar", "delta", "ember", "fjord", "grove", "heath", "inlet", "jetty",
    "knoll", "ledge", "marsh", "north", "oasis", "prairie", "quarry", "ridge", "shoal", "tundra",
];

fn phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..6);
    (0..n)
        .map(|_| *VOCAB.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A small random encoder and batch for gradient checks.
pub fn gradient_instance(seed: u64, dim: usize) -> (EncoderParams, Vec<CandidateSet>, LossConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EncoderConfig {
        feature_dim: 48,
        dim,
        shared: seed.is_multiple_of(2),
    };
    let params = EncoderParams::random(cfg, seed).unwrap();
    let sets = (0..rng.random_range(1..3))
        .map(|_| {
            let n = rng.random_range(2..6);
            let candidates = (0..n)
                .map(|i| Candidate {
                    text: phrase(&mut rng),
                    doc_id: format!("d{i}"),
                    label: if i == 0 {
                        SupportLevel::Full
                    } else {
                        *[SupportLevel::No, SupportLevel::Partial, SupportLevel::Full]
                            .choose(&mut rng)
                            .unwrap()
                    },
                    score: 0.0,
                })
                .collect();
            CandidateSet {
                query: phrase(&mut rng),
                candidates,
                positive: 0,
            }
        })
        .collect();
    let loss = LossConfig {
        temperature: rng.random_range(0.2..1.0),
        pairwise_weight: rng.random_range(0.5..2.0),
        include_positive_in_pairs: true,
    };
    (params, sets, loss)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter with a non-zero analytic gradient row. Relative error
/// is `|a - n| / max(|a|, |n|, floor)`.
pub fn max_gradient_error(params: &EncoderParams, sets: &[CandidateSet], loss: &LossConfig, h: f64, floor: f64) -> f64 {
    let analytic = forward_backward(params, sets, loss).unwrap().grads;
    let cfg = params.config;
    let sides: &[Side] = if cfg.shared { &[Side::Query] } else { &[Side::Query, Side::Document] };
    let mut worst: f64 = 0.0;
    for &side in sides {
        let dense = analytic.to_dense(side, cfg.feature_dim);
        for &row in analytic.rows(side).keys() {
            for c in 0..cfg.dim {
                let i = row * cfg.dim + c;
                let shifted = |delta: f64| {
                    let mut q = params.projection(Side::Query).to_vec();
                    let mut d = (!cfg.shared).then(|| params.projection(Side::Document).to_vec());
                    match side {
                        Side::Query => q[i] += delta,
                        Side::Document => d.as_mut().unwrap()[i] += delta,
                    }
                    let p = EncoderParams::from_matrices(cfg, q, d).unwrap();
                    forward_loss(&p, sets, loss).unwrap()
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let a = dense[i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(err);
            }
        }
    }
    worst
}

pub mod cli {
    use std::collections::BTreeMap;
    use std::path::{Path, PathBuf};
    use std::process::{Command, Output};

    pub fn fixtures() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    fn copy_dir(from: &Path, to: &Path) {
        std::fs::create_dir_all(to).unwrap();
        for e in std::fs::read_dir(from).unwrap() {
            let p = e.unwrap().path();
            let dest = to.join(p.file_name().unwrap());
            if p.is_dir() {
                copy_dir(&p, &dest);
            } else {
                std::fs::copy(&p, &dest).unwrap();
            }
        }
    }

    /// A scratch directory holding the fixture inputs and a run config that
    /// covers every command, with `extra` appended to the config.
    pub fn workspace(dir: &Path, extra: &str) -> PathBuf {
        for sub in ["separable", "adaptive"] {
            copy_dir(&fixtures().join(sub), &dir.join(sub));
        }
        std::fs::copy(fixtures().join("sample_corpus.jsonl"), dir.join("sample_corpus.jsonl")).unwrap();
        let cfg = dir.join("relabel.toml");
        let text = format!(
            r#"seed = 0

[paths]
raw = "separable/corpus.jsonl"
dev = "separable/dev_queries.jsonl"
demonstrations = "separable/demonstrations.txt"
pairs = "separable/pairs.jsonl"
questions = "separable/answer_questions.jsonl"
{extra}
"#
        );
        std::fs::write(&cfg, text).unwrap();
        cfg
    }

    pub fn relabel(config: &Path, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_relabel"))
            .arg("--config")
            .arg(config)
            .args(args)
            .env_remove("SOURCE_DATE_EPOCH")
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    /// Runs a command and returns its exit status, echoing stderr on failure.
    pub fn status(config: &Path, args: &[&str]) -> i32 {
        let out = relabel(config, args);
        let code = out.status.code().unwrap_or(-1);
        if code != 0 {
            eprintln!("relabel {args:?} exited {code}: {}", String::from_utf8_lossy(&out.stderr));
        }
        code
    }

    /// sha256 of every file under `dir`, keyed by relative path.
    pub fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
        fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
            for e in std::fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    walk(root, &p, out);
                } else {
                    let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, relabel::cli::sha256_file(&p).unwrap());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(dir, dir, &mut out);
        out
    }
}
