use std::collections::BTreeMap;
use std::path::Path;

use crate::data::SupportLevel;
use crate::error::{Error, Result};
use crate::text::normalized_tokens;

const QUESTION_TEMPLATE: &str = "\
Given only the information below, following the examples, ask a factual question that we can answer according to the given passage.

Examples:
{demonstrations}

Passage:
{passage}

Reply with the question on the first line and, on the second line, the sentence of the passage that answers it, copied verbatim.
";

const EVIDENCE_TEMPLATE: &str = "\
Question: {question}

Document:
{passage}

Extract the evidence in the document that supports answering the question. On the first line reply with exactly one of: full support, partial support, no support. On the second line copy the evidence verbatim from the document.
";

const SCORE_TEMPLATE: &str = "\
Question: {question}

Evidence:
{passage}

How well does the evidence support answering the question? Reply on the first line with exactly one of: full support, partial support, no support.
";

/// Text with `{name}` placeholders; `{{` and `}}` are literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn pieces(text: &str) -> Result<Vec<Piece<'_>>> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix("{{") {
            out.push(Piece::Literal("{"));
            rest = r;
        } else if let Some(r) = rest.strip_prefix("}}") {
            out.push(Piece::Literal("}"));
            rest = r;
        } else if let Some(r) = rest.strip_prefix('{') {
            let end = r
                .find('}')
                .ok_or_else(|| Error::InvalidArgument("unterminated placeholder".into()))?;
            let name = &r[..end];
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::InvalidArgument(format!("bad placeholder {{{name}}}")));
            }
            out.push(Piece::Slot(name));
            rest = &r[end + 1..];
        } else {
            let end = rest.find(['{', '}']).unwrap_or(rest.len());
            let end = if end == 0 { 1 } else { end };
            out.push(Piece::Literal(&rest[..end]));
            rest = &rest[end..];
        }
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let t = PromptTemplate {
            name: name.into(),
            text: text.into(),
        };
        pieces(&t.text)?;
        Ok(t)
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names: Vec<String> = pieces(&self.text)
            .unwrap_or_default()
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(n) => Some(n.to_owned()),
                Piece::Literal(_) => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Substitutes every placeholder; a placeholder missing from `values`
    /// is an error.
    pub fn render(&self, values: &BTreeMap<&str, &str>) -> Result<String> {
        let mut out = String::with_capacity(self.text.len());
        for p in pieces(&self.text)? {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(n) => out.push_str(values.get(n).ok_or_else(|| {
                    Error::InvalidArgument(format!("template {:?} needs {{{n}}}", self.name))
                })?),
            }
        }
        Ok(out)
    }
}

/// The three prompts an LLM labeler needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub question: PromptTemplate,
    pub evidence: PromptTemplate,
    pub score: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            question: PromptTemplate::new("question", QUESTION_TEMPLATE).expect("valid"),
            evidence: PromptTemplate::new("evidence", EVIDENCE_TEMPLATE).expect("valid"),
            score: PromptTemplate::new("score", SCORE_TEMPLATE).expect("valid"),
        }
    }
}

impl PromptSet {
    /// Reads `question.txt`, `evidence.txt` and `score.txt` from `dir`,
    /// keeping the default for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = PromptSet::default();
        for (name, slot) in [
            ("question", &mut set.question),
            ("evidence", &mut set.evidence),
            ("score", &mut set.score),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                *slot = PromptTemplate::new(name, text)?;
            }
        }
        Ok(set)
    }
}

/// Reads a support label from the first non-empty line of a reply.
/// Returns `None` when the line names no label.
pub fn parse_support_label(reply: &str) -> Option<SupportLevel> {
    let line = reply.lines().find(|l| !l.trim().is_empty())?;
    let tokens = normalized_tokens(line);
    let has = |w: &str| tokens.iter().any(|t| t == w);
    if tokens.iter().any(|t| t.starts_with("partial")) {
        Some(SupportLevel::Partial)
    } else if has("no") || has("not") || has("none") {
        Some(SupportLevel::No)
    } else if tokens.iter().any(|t| t.starts_with("full")) {
        Some(SupportLevel::Full)
    } else {
        None
    }
}
