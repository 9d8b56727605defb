//! Candidate-set construction: in-batch negatives for warmup and
//! label-aware hard negatives for the main epochs.

use std::collections::{HashMap, HashSet};

use super::{Candidate, CandidateSet};
use crate::data::{SupportLevel, TrainingTuple};

/// Each set gains the other sets' positives as `No` candidates. A positive is
/// not added when the other set asks the same question or shares the same
/// positive text.
pub fn in_batch_negatives(batch: &[CandidateSet]) -> Vec<CandidateSet> {
    batch
        .iter()
        .enumerate()
        .map(|(i, set)| {
            let mut out = set.clone();
            let own_positive = &set.candidates[set.positive].text;
            for (j, other) in batch.iter().enumerate() {
                if i == j || other.query == set.query {
                    continue;
                }
                let theirs = &other.candidates[other.positive];
                if &theirs.text == own_positive {
                    continue;
                }
                out.candidates.push(Candidate {
                    label: SupportLevel::No,
                    score: 0.0,
                    ..theirs.clone()
                });
            }
            out
        })
        .collect()
}

/// Tuples for one question, by index into the tuple list.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub question: String,
    pub positive: usize,
    pub partials: Vec<usize>,
    pub nos: Vec<usize>,
}

/// Groups tuples by question in first-appearance order. Questions without a
/// full-support tuple are returned separately. The first full-support tuple
/// is the positive; later ones are ignored for list-wise purposes.
pub fn group_tuples(tuples: &[TrainingTuple]) -> (Vec<QueryGroup>, Vec<String>) {
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, t) in tuples.iter().enumerate() {
        let entry = members.entry(t.question.as_str()).or_insert_with(|| {
            order.push(t.question.as_str());
            Vec::new()
        });
        entry.push(i);
    }

    let mut groups = Vec::new();
    let mut without_positive = Vec::new();
    for question in order {
        let idx = &members[question];
        let Some(&positive) = idx.iter().find(|&&i| tuples[i].support == SupportLevel::Full) else {
            without_positive.push(question.to_owned());
            continue;
        };
        let positive_text = &tuples[positive].evidence.text;
        let mut seen = HashSet::new();
        let mut partials = Vec::new();
        let mut nos = Vec::new();
        for &i in idx {
            let t = &tuples[i];
            if t.support == SupportLevel::Full || &t.evidence.text == positive_text {
                continue;
            }
            if !seen.insert((&t.evidence.doc_id, t.evidence.start, t.evidence.end)) {
                continue;
            }
            match t.support {
                SupportLevel::Partial => partials.push(i),
                _ => nos.push(i),
            }
        }
        groups.push(QueryGroup {
            question: question.to_owned(),
            positive,
            partials,
            nos,
        });
    }
    (groups, without_positive)
}

fn candidate(t: &TrainingTuple, score: f64) -> Candidate {
    Candidate {
        text: t.evidence.text.clone(),
        doc_id: t.doc_id.clone(),
        label: t.support,
        score,
    }
}

impl QueryGroup {
    /// Positive first, then up to `limit` negatives: partial-support tuples by
    /// descending score, then no-support tuples to fill the remaining slots.
    pub fn select(
        &self,
        tuples: &[TrainingTuple],
        limit: usize,
        score: &mut dyn FnMut(usize) -> f64,
    ) -> CandidateSet {
        let mut ranked = |idx: &[usize]| {
            let mut scored: Vec<(usize, f64)> = idx.iter().map(|&i| (i, score(i))).collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored
        };
        let partials = ranked(&self.partials);
        let nos = ranked(&self.nos);
        let mut candidates = vec![candidate(&tuples[self.positive], score(self.positive))];
        candidates.extend(
            partials
                .into_iter()
                .chain(nos)
                .take(limit)
                .map(|(i, s)| candidate(&tuples[i], s)),
        );
        CandidateSet {
            query: self.question.clone(),
            candidates,
            positive: 0,
        }
    }
}

/// Hard-negative candidate sets for every question with a positive.
#[derive(Debug, Clone, PartialEq)]
pub struct HardNegativeSelection {
    pub sets: Vec<CandidateSet>,
    /// Questions whose set holds only the positive; they rely on in-batch
    /// negatives.
    pub flagged: Vec<String>,
    pub without_positive: Vec<String>,
}

pub fn select_hard_negatives(
    tuples: &[TrainingTuple],
    per_query_limit: usize,
    scorer: &dyn Fn(&str, &str) -> f64,
) -> HardNegativeSelection {
    let (groups, without_positive) = group_tuples(tuples);
    let mut sets = Vec::with_capacity(groups.len());
    let mut flagged = Vec::new();
    for g in &groups {
        let set = g.select(tuples, per_query_limit, &mut |i| {
            scorer(&g.question, &tuples[i].evidence.text)
        });
        if set.candidates.len() == 1 {
            flagged.push(g.question.clone());
        }
        sets.push(set);
    }
    HardNegativeSelection {
        sets,
        flagged,
        without_positive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Document, Provenance};

    fn tuple(q: &str, doc: &str, text: &str, s: SupportLevel) -> TrainingTuple {
        let d = Document::new(doc, text);
        TrainingTuple::new(q, d.chunk(0..text.len()).unwrap(), s, Provenance::Generated).unwrap()
    }

    fn set(q: &str, pos: &str) -> CandidateSet {
        CandidateSet {
            query: q.into(),
            candidates: vec![Candidate {
                text: pos.into(),
                doc_id: format!("doc-{pos}"),
                label: SupportLevel::Full,
                score: 0.0,
            }],
            positive: 0,
        }
    }

    #[test]
    fn in_batch_counts() {
        let one = in_batch_negatives(&[set("q1", "a")]);
        assert_eq!(one[0].candidates.len(), 1);
        let three = in_batch_negatives(&[set("q1", "a"), set("q2", "b"), set("q3", "c")]);
        for (s, own) in three.iter().zip(["a", "b", "c"]) {
            assert_eq!(s.candidates.len(), 3);
            assert!(s.candidates[1..].iter().all(|c| c.label == SupportLevel::No && c.text != own));
        }
    }

    #[test]
    fn duplicate_question_twin_is_excluded() {
        let out = in_batch_negatives(&[set("q1", "a"), set("q1", "a2"), set("q2", "b")]);
        let texts: Vec<&str> = out[0].candidates.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["a", "b"]);
        let texts: Vec<&str> = out[2].candidates.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["b", "a", "a2"]);
    }

    #[test]
    fn partials_ranked_by_score_then_nos_fill() {
        use SupportLevel::*;
        let mut tuples = vec![tuple("q", "pos", "gold", Full)];
        for i in 0..5 {
            tuples.push(tuple("q", &format!("p{i}"), &format!("partial {i}"), Partial));
        }
        tuples.push(tuple("q", "n0", "nothing", No));
        // score grows with the digit in the text
        let scorer = |_: &str, text: &str| {
            text.chars().filter(char::is_ascii_digit).collect::<String>().parse::<f64>().unwrap_or(-1.0)
        };
        let sel = select_hard_negatives(&tuples, 3, &scorer);
        let texts: Vec<&str> = sel.sets[0].candidates.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["gold", "partial 4", "partial 3", "partial 2"]);

        let sel = select_hard_negatives(&tuples, 7, &scorer);
        assert_eq!(sel.sets[0].candidates.len(), 7);
        assert_eq!(sel.sets[0].candidates[6].text, "nothing");
    }

    #[test]
    fn lone_positive_is_flagged() {
        let tuples = vec![tuple("q", "d", "gold", SupportLevel::Full)];
        let sel = select_hard_negatives(&tuples, 3, &|_, _| 0.0);
        assert_eq!(sel.flagged, vec!["q".to_string()]);
        assert_eq!(sel.sets[0].candidates.len(), 1);
    }

    #[test]
    fn partial_above_positive_still_penalized() {
        use SupportLevel::*;
        let tuples = vec![tuple("q", "d", "gold", Full), tuple("q", "e", "close", Partial)];
        let scorer = |_: &str, text: &str| if text == "close" { 0.9 } else { 0.2 };
        let sel = select_hard_negatives(&tuples, 3, &scorer);
        let s = &sel.sets[0];
        assert_eq!(s.candidates[1].label, Partial);
        assert!(s.pair_loss(&Default::default()) > 0.0);
    }
}
