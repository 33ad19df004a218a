//! Mention-level micro-F1 evaluation.
//!
//! The protocol makes exactly one prediction per retained mention, so
//! precision equals recall and micro-F1 equals accuracy over retained,
//! gold-annotated mentions. Mentions whose gold entity did not survive
//! candidate pruning stay in the denominator and count as wrong; the report
//! carries gold recall separately so the ceiling is visible.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// One linking decision, as produced by `link` and consumed by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    /// Ordinal of the mention among the document's retained mentions.
    pub mention_index: usize,
    pub entity: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocCounts {
    pub doc_id: String,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// `correct / total` over retained gold-annotated mentions; `None` when
    /// the evaluation is empty.
    pub micro_f1: Option<f64>,
    pub correct: usize,
    pub total: usize,
    /// Fraction of evaluated mentions whose gold survived candidate pruning.
    pub gold_recall: Option<f64>,
    /// Evaluated mentions whose gold entity is not among their candidates.
    pub unrecoverable: usize,
    /// Mentions dropped at load because they had no candidates.
    pub dropped_mentions: usize,
    /// Retained mentions whose gold id is absent from the KB.
    pub unknown_gold: usize,
    pub empty: bool,
    pub per_document: Vec<DocCounts>,
}

/// Score predictions against a corpus. Every retained gold-annotated mention
/// must receive exactly one prediction; predictions for unannotated mentions
/// are tolerated and ignored.
pub fn micro_f1(predictions: &[Prediction], corpus: &Corpus) -> Result<EvalReport> {
    let mut by_mention: HashMap<(&str, usize), &Prediction> = HashMap::new();
    for pred in predictions {
        let doc = corpus
            .documents
            .iter()
            .find(|d| d.doc_id == pred.doc_id)
            .ok_or_else(|| Error::Input(format!("prediction for unknown document {:?}", pred.doc_id)))?;
        if pred.mention_index >= doc.mentions.len() {
            return Err(Error::Input(format!(
                "prediction for unknown mention {} of document {:?}",
                pred.mention_index, pred.doc_id
            )));
        }
        if by_mention
            .insert((pred.doc_id.as_str(), pred.mention_index), pred)
            .is_some()
        {
            return Err(Error::Input(format!(
                "multiple predictions for mention {} of document {:?}",
                pred.mention_index, pred.doc_id
            )));
        }
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    let mut unrecoverable = 0usize;
    let mut per_document = Vec::new();
    for doc in &corpus.documents {
        let mut doc_correct = 0usize;
        let mut doc_total = 0usize;
        for mention in &doc.mentions {
            let Some(gold) = &mention.gold else { continue };
            doc_total += 1;
            if mention.candidate_rank(gold).is_none() {
                unrecoverable += 1;
            }
            let pred = by_mention
                .get(&(doc.doc_id.as_str(), mention.ordinal))
                .ok_or_else(|| {
                    Error::Input(format!(
                        "missing prediction for mention {} of document {:?}",
                        mention.ordinal, doc.doc_id
                    ))
                })?;
            if &pred.entity == gold {
                doc_correct += 1;
            }
        }
        correct += doc_correct;
        total += doc_total;
        per_document.push(DocCounts {
            doc_id: doc.doc_id.clone(),
            correct: doc_correct,
            total: doc_total,
        });
    }

    let empty = total == 0;
    Ok(EvalReport {
        micro_f1: (!empty).then(|| correct as f64 / total as f64),
        correct,
        total,
        gold_recall: (!empty).then(|| (total - unrecoverable) as f64 / total as f64),
        unrecoverable,
        dropped_mentions: corpus.stats.dropped_mentions,
        unknown_gold: corpus.stats.unknown_gold,
        empty,
        per_document,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus_str;
    use crate::kb::load_kb_str;

    fn fixture() -> Corpus {
        let kb = load_kb_str(concat!(
            r#"{"type":"page","id":"A","title":"a","text":"","outlinks":[]}"#,
            "\n",
            r#"{"type":"page","id":"B","title":"b","text":"","outlinks":[]}"#,
            "\n",
            r#"{"type":"alias","surface":"x","candidates":[["A",0.6],["B",0.4]]}"#,
            "\n",
        ))
        .unwrap();
        load_corpus_str(
            concat!(
                r#"{"doc_id":"d1","text":"x x","mentions":[{"start":0,"end":1,"gold":"A"},{"start":2,"end":3,"gold":"B"}]}"#,
                "\n",
                r#"{"doc_id":"d2","text":"x x","mentions":[{"start":0,"end":1,"gold":"A"},{"start":2,"end":3,"gold":"A"}]}"#,
                "\n",
            ),
            &kb,
        )
        .unwrap()
    }

    fn pred(doc: &str, idx: usize, entity: &str) -> Prediction {
        Prediction {
            doc_id: doc.into(),
            mention_index: idx,
            entity: entity.into(),
            score: 1.0,
            start: None,
            end: None,
            k: None,
            mode: None,
        }
    }

    #[test]
    fn all_correct_is_one() {
        let corpus = fixture();
        let preds = vec![
            pred("d1", 0, "A"),
            pred("d1", 1, "B"),
            pred("d2", 0, "A"),
            pred("d2", 1, "A"),
        ];
        let report = micro_f1(&preds, &corpus).unwrap();
        assert_eq!(report.micro_f1, Some(1.0));
        assert_eq!(report.gold_recall, Some(1.0));
    }

    #[test]
    fn three_of_four_is_075() {
        let corpus = fixture();
        let preds = vec![
            pred("d1", 0, "A"),
            pred("d1", 1, "A"), // wrong
            pred("d2", 0, "A"),
            pred("d2", 1, "A"),
        ];
        let report = micro_f1(&preds, &corpus).unwrap();
        assert_eq!(report.micro_f1, Some(0.75));
        assert_eq!(report.correct, 3);
        assert_eq!(report.total, 4);
    }

    #[test]
    fn empty_evaluation_reports_null() {
        let kb = load_kb_str("").unwrap();
        let corpus = load_corpus_str("", &kb).unwrap();
        let report = micro_f1(&[], &corpus).unwrap();
        assert!(report.empty);
        assert_eq!(report.micro_f1, None);
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["micro_f1"].is_null());
    }

    #[test]
    fn unknown_mention_is_input_error() {
        let corpus = fixture();
        let preds = vec![pred("d1", 9, "A")];
        assert!(matches!(micro_f1(&preds, &corpus), Err(Error::Input(_))));
        let preds = vec![pred("nope", 0, "A")];
        assert!(matches!(micro_f1(&preds, &corpus), Err(Error::Input(_))));
    }

    #[test]
    fn duplicate_prediction_is_input_error() {
        let corpus = fixture();
        let preds = vec![
            pred("d1", 0, "A"),
            pred("d1", 0, "B"),
        ];
        assert!(matches!(micro_f1(&preds, &corpus), Err(Error::Input(_))));
    }
}
