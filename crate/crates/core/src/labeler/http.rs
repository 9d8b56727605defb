use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::mock::MockOracle;
use super::prompt::{parse_support_label, PromptSet};
use super::{GeneratedQuestion, InFlightGate, LabelerOracle, OracleMeter, OracleUsage};
use crate::data::{chunk_document, ChunkingPolicy, Document, EvidenceChunk, SupportLevel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// Chat-completion endpoint URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    /// Oracle calls allowed; unlimited when absent.
    pub budget: Option<u64>,
    pub cost_per_call: f64,
    /// Request/response log, one JSON object per attempt.
    pub audit_path: Option<PathBuf>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "RELABEL_API_KEY".into(),
            max_in_flight: 4,
            retries: 3,
            backoff_base_ms: 1000,
            timeout_secs: 60,
            budget: None,
            cost_per_call: 0.0,
            audit_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub attempt: u32,
    pub request: Value,
    pub status: Option<u16>,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Blocking chat-completion client with retries, bounded concurrency and an
/// audit log.
pub struct ChatTransport {
    cfg: TransportConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    gate: InFlightGate,
    audit: Mutex<Option<std::fs::File>>,
}

impl ChatTransport {
    pub fn new(cfg: TransportConfig) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let audit = match &cfg.audit_path {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                Some(
                    std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(p)
                        .map_err(|e| Error::io(p, e))?,
                )
            }
            None => None,
        };
        Ok(ChatTransport {
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
            gate: InFlightGate::new(cfg.max_in_flight),
            agent,
            audit: Mutex::new(audit),
            cfg,
        })
    }

    pub fn config(&self) -> &TransportConfig {
        &self.cfg
    }

    fn log(&self, record: &AuditRecord) {
        let mut guard = self.audit.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = guard.as_mut() {
            if let Ok(line) = serde_json::to_string(record) {
                if let Err(e) = writeln!(f, "{line}") {
                    log::warn!("audit log write failed: {e}");
                }
            }
        }
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, (bool, Option<u16>, String)> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| {
            let retryable = matches!(e, ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed);
            (retryable, None, e.to_string())
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, Some(status), e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err((true, Some(status), text));
        }
        if status >= 400 {
            return Err((false, Some(status), text));
        }
        Ok(text)
    }

    /// Sends one user message and returns the first choice's content.
    pub fn chat(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        self.gate.run(|| {
            let mut attempt = 0;
            loop {
                match self.attempt(&body) {
                    Ok(text) => {
                        self.log(&AuditRecord {
                            attempt,
                            request: body.clone(),
                            status: Some(200),
                            response: Some(text.clone()),
                            error: None,
                        });
                        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Transport {
                            retryable: false,
                            message: format!("response is not JSON: {e}"),
                        })?;
                        return v["choices"][0]["message"]["content"]
                            .as_str()
                            .map(str::to_owned)
                            .ok_or_else(|| Error::Transport {
                                retryable: false,
                                message: "response has no choices[0].message.content".into(),
                            });
                    }
                    Err((retryable, status, message)) => {
                        self.log(&AuditRecord {
                            attempt,
                            request: body.clone(),
                            status,
                            response: None,
                            error: Some(message.clone()),
                        });
                        if !retryable || attempt >= self.cfg.retries {
                            return Err(Error::Transport { retryable, message });
                        }
                        let wait = self.cfg.backoff_base_ms.saturating_mul(1 << attempt.min(16));
                        log::debug!("retrying chat request in {wait} ms: {message}");
                        std::thread::sleep(Duration::from_millis(wait));
                        attempt += 1;
                    }
                }
            }
        })
    }
}

/// Labeler backed by a chat-completion model.
pub struct LlmOracle {
    transport: ChatTransport,
    prompts: PromptSet,
    chunking: ChunkingPolicy,
    meter: OracleMeter,
}

impl LlmOracle {
    pub fn new(transport: ChatTransport, prompts: PromptSet, chunking: ChunkingPolicy) -> Self {
        let meter = OracleMeter::new(transport.cfg.budget, transport.cfg.cost_per_call);
        LlmOracle {
            transport,
            prompts,
            chunking,
            meter,
        }
    }

    /// The document chunk best matching `quoted`: the one containing it, or
    /// failing that the one with the most overlap with `fallback_question`.
    fn locate(&self, doc: &Document, quoted: Option<&str>, fallback_question: &str) -> Result<EvidenceChunk> {
        let chunks = chunk_document(doc, &self.chunking);
        if chunks.is_empty() {
            return Err(Error::NoChunks);
        }
        if let Some(q) = quoted.map(str::trim).filter(|q| !q.is_empty()) {
            if let Some(pos) = doc.text.find(q) {
                if let Some(c) = chunks.iter().find(|c| c.start <= pos && pos < c.end) {
                    return Ok(c.clone());
                }
            }
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in chunks.iter().enumerate() {
            let r = MockOracle::overlap_ratio(fallback_question, &c.text);
            if r > best.1 {
                best = (i, r);
            }
        }
        Ok(chunks[best.0].clone())
    }

    fn label(&self, reply: &str) -> SupportLevel {
        parse_support_label(reply).unwrap_or_else(|| {
            self.meter.record_parse_failure();
            SupportLevel::No
        })
    }
}

fn nth_line(reply: &str, n: usize) -> Option<&str> {
    reply.lines().filter(|l| !l.trim().is_empty()).nth(n)
}

impl LabelerOracle for LlmOracle {
    fn generate_question(&self, doc: &Document, demonstrations: &[String]) -> Result<GeneratedQuestion> {
        self.meter.begin_call()?;
        let demos = demonstrations.join("\n");
        let prompt = self.prompts.question.render(&BTreeMap::from([
            ("demonstrations", demos.as_str()),
            ("passage", doc.text.as_str()),
        ]))?;
        let reply = self.transport.chat(&prompt)?;
        let question = nth_line(&reply, 0)
            .map(|l| l.trim().trim_start_matches("Question:").trim().to_owned())
            .filter(|q| !q.is_empty())
            .ok_or_else(|| {
                self.meter.record_parse_failure();
                Error::Transport {
                    retryable: false,
                    message: "empty question reply".into(),
                }
            })?;
        let evidence = self.locate(doc, nth_line(&reply, 1), &question)?;
        Ok(GeneratedQuestion { question, evidence })
    }

    fn identify_evidence(&self, question: &str, doc: &Document) -> Result<(EvidenceChunk, SupportLevel)> {
        self.meter.begin_call()?;
        let prompt = self.prompts.evidence.render(&BTreeMap::from([
            ("question", question),
            ("passage", doc.text.as_str()),
        ]))?;
        let reply = self.transport.chat(&prompt)?;
        let support = self.label(&reply);
        let evidence = self.locate(doc, nth_line(&reply, 1), question)?;
        Ok((evidence, support))
    }

    fn score_evidence(&self, question: &str, evidence: &EvidenceChunk) -> Result<SupportLevel> {
        self.meter.begin_call()?;
        let prompt = self.prompts.score.render(&BTreeMap::from([
            ("question", question),
            ("passage", evidence.text.as_str()),
        ]))?;
        Ok(self.label(&self.transport.chat(&prompt)?))
    }

    fn usage(&self) -> OracleUsage {
        self.meter.usage()
    }
}
