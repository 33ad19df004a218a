//! Documents, mentions, gold labels, and candidate generation.
//!
//! Corpus files are line-delimited JSON, one document per line:
//!
//! ```text
//! {"doc_id":"d1","text":"...","mentions":[{"start":0,"end":8,"gold":"E1"}]}
//! ```
//!
//! `start`/`end` are character offsets into `text`. Candidates come from the
//! KB alias table, pruned to the top entries by prior; mentions whose surface
//! has no candidates are dropped and counted. Documents are immutable after
//! load.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::tokenize::{tokenize, tokenize_spans};

/// Maximum candidates kept per mention at load time.
pub const MAX_CANDIDATES: usize = 7;

#[derive(Debug, Clone)]
pub struct Mention {
    /// Normalized token sequence of the spanned text.
    pub surface: Vec<String>,
    /// `[start, end)` character offsets into the document text.
    pub char_span: (usize, usize),
    /// Token index range `[first, last]` covered by the span.
    pub token_span: (usize, usize),
    pub gold: Option<String>,
    /// 0-based index of the mention in document order.
    pub ordinal: usize,
    /// Candidate entities with priors, sorted by prior descending, at most
    /// [`MAX_CANDIDATES`] entries.
    pub candidates: Vec<(String, f64)>,
}

impl Mention {
    /// Index of `entity` within this mention's candidate list.
    pub fn candidate_rank(&self, entity: &str) -> Option<usize> {
        self.candidates.iter().position(|(id, _)| id == entity)
    }
}

#[derive(Debug, Clone)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
    /// Deduplicated candidate ids over all mentions, ordered by first-mention
    /// ordinal then prior rank. Index positions are the row ids used by the
    /// propagation stage.
    pub candidate_union: Vec<String>,
    /// Ordinal of the first mention that introduced each union entry.
    pub first_mention: Vec<usize>,
}

impl Document {
    pub fn union_index(&self, entity: &str) -> Option<usize> {
        self.candidate_union.iter().position(|e| e == entity)
    }

    pub fn union_size(&self) -> usize {
        self.candidate_union.len()
    }
}

/// Load-time bookkeeping, reported alongside the documents.
#[derive(Debug, Default, Clone, Copy)]
pub struct CorpusStats {
    /// Annotated mentions in the input, before any filtering.
    pub total_mentions: usize,
    /// Mentions dropped because their surface produced no candidates.
    pub dropped_mentions: usize,
    /// Retained mentions whose gold id is absent from the KB.
    pub unknown_gold: usize,
}

impl CorpusStats {
    pub fn retained(&self) -> usize {
        self.total_mentions - self.dropped_mentions
    }
}

#[derive(Debug)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub stats: CorpusStats,
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: String,
    text: String,
    mentions: Vec<RawMention>,
}

#[derive(Deserialize)]
struct RawMention {
    start: usize,
    end: usize,
    #[serde(default)]
    gold: Option<String>,
}

/// Load a corpus file, populating candidates from the KB alias table.
pub fn load_corpus(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<Corpus> {
    let file = File::open(path.as_ref())?;
    load_corpus_reader(BufReader::new(file), kb)
}

/// Parse a corpus from in-memory line-delimited records.
pub fn load_corpus_str(text: &str, kb: &KnowledgeBase) -> Result<Corpus> {
    load_corpus_reader(std::io::Cursor::new(text), kb)
}

fn load_corpus_reader(reader: impl BufRead, kb: &KnowledgeBase) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut stats = CorpusStats::default();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line)
            .map_err(|e| Error::parse(lineno, format!("bad document record: {e}")))?;
        documents.push(build_document(raw, kb, lineno, &mut stats)?);
    }

    Ok(Corpus { documents, stats })
}

fn build_document(
    raw: RawDocument,
    kb: &KnowledgeBase,
    lineno: usize,
    stats: &mut CorpusStats,
) -> Result<Document> {
    let spanned = tokenize_spans(&raw.text);
    let tokens: Vec<String> = spanned.iter().map(|t| t.text.clone()).collect();
    let char_len = raw.text.chars().count();

    let mut mentions = Vec::new();
    for m in &raw.mentions {
        stats.total_mentions += 1;
        if m.start >= m.end || m.end > char_len {
            return Err(Error::parse(
                lineno,
                format!(
                    "doc {}: mention span [{}, {}) out of bounds (text has {} chars)",
                    raw.doc_id, m.start, m.end, char_len
                ),
            ));
        }
        let surface_text: String = raw
            .text
            .chars()
            .skip(m.start)
            .take(m.end - m.start)
            .collect();
        let surface = tokenize(&surface_text);

        let mut candidates: Vec<(String, f64)> = kb.candidate_priors(&surface_text).to_vec();
        candidates.truncate(MAX_CANDIDATES);
        if candidates.is_empty() {
            stats.dropped_mentions += 1;
            continue;
        }
        if let Some(gold) = &m.gold {
            if !kb.contains(gold) {
                stats.unknown_gold += 1;
            }
        }

        // Token range covered by the span: tokens overlapping [start, end).
        let first = spanned.iter().position(|t| t.end > m.start);
        let last = spanned.iter().rposition(|t| t.start < m.end);
        let token_span = match (first, last) {
            (Some(f), Some(l)) if f <= l => (f, l),
            _ => {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "doc {}: mention span [{}, {}) covers no tokens",
                        raw.doc_id, m.start, m.end
                    ),
                ))
            }
        };

        mentions.push(Mention {
            surface,
            char_span: (m.start, m.end),
            token_span,
            gold: m.gold.clone(),
            ordinal: 0, // assigned below, over retained mentions only
            candidates,
        });
    }

    mentions.sort_by_key(|m| m.char_span.0);
    for (i, m) in mentions.iter_mut().enumerate() {
        m.ordinal = i;
    }

    let mut candidate_union = Vec::new();
    let mut first_mention = Vec::new();
    for m in &mentions {
        for (id, _) in &m.candidates {
            if !candidate_union.contains(id) {
                candidate_union.push(id.clone());
                first_mention.push(m.ordinal);
            }
        }
    }

    Ok(Document {
        doc_id: raw.doc_id,
        tokens,
        mentions,
        candidate_union,
        first_mention,
    })
}

/// Up to `w` tokens on each side of the mention, clipped at the document
/// boundaries; the mention's own tokens are excluded.
pub fn context_window(doc: &Document, mention: &Mention, w: usize) -> Vec<String> {
    let (first, last) = mention.token_span;
    let left_start = first.saturating_sub(w);
    let right_end = (last + 1 + w).min(doc.tokens.len());
    let mut out = Vec::with_capacity(2 * w);
    out.extend_from_slice(&doc.tokens[left_start..first]);
    out.extend_from_slice(&doc.tokens[(last + 1).min(doc.tokens.len())..right_end]);
    out
}

/// First `n` tokens of the document.
pub fn document_prefix(doc: &Document, n: usize) -> &[String] {
    &doc.tokens[..n.min(doc.tokens.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::load_kb;
    use std::io::Write;

    fn kb_with_aliases(aliases: &[(&str, &[(&str, f64)])], entities: &[&str]) -> KnowledgeBase {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for id in entities {
            writeln!(
                f,
                r#"{{"type":"page","id":"{id}","title":"{id}","text":"","outlinks":[]}}"#
            )
            .unwrap();
        }
        for (surface, cands) in aliases {
            let cands_json: Vec<serde_json::Value> = cands
                .iter()
                .map(|(id, p)| serde_json::json!([id, p]))
                .collect();
            writeln!(
                f,
                r#"{{"type":"alias","surface":"{surface}","candidates":{}}}"#,
                serde_json::Value::Array(cands_json)
            )
            .unwrap();
        }
        load_kb(f.path()).unwrap()
    }

    fn load_one(doc_json: &str, kb: &KnowledgeBase) -> Corpus {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{doc_json}").unwrap();
        load_corpus(f.path(), kb).unwrap()
    }

    #[test]
    fn candidates_pruned_to_top_seven() {
        let ids: Vec<String> = (0..9).map(|i| format!("E{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let cands: Vec<(&str, f64)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), 0.01 + 0.01 * (9 - i) as f64))
            .collect();
        let kb = kb_with_aliases(&[("paris", &cands)], &id_refs);
        let corpus = load_one(
            r#"{"doc_id":"d","text":"paris is here","mentions":[{"start":0,"end":5,"gold":"E0"}]}"#,
            &kb,
        );
        let m = &corpus.documents[0].mentions[0];
        assert_eq!(m.candidates.len(), 7);
        // highest priors survive
        assert_eq!(m.candidates[0].0, "E0");
        assert_eq!(m.candidates[6].0, "E6");
    }

    #[test]
    fn mention_without_alias_dropped_and_counted() {
        let kb = kb_with_aliases(&[], &["E0"]);
        let corpus = load_one(
            r#"{"doc_id":"d","text":"unknown thing","mentions":[{"start":0,"end":7,"gold":"E0"}]}"#,
            &kb,
        );
        assert_eq!(corpus.stats.dropped_mentions, 1);
        assert_eq!(corpus.stats.total_mentions, 1);
        assert!(corpus.documents[0].mentions.is_empty());
    }

    #[test]
    fn shared_candidate_deduplicated_in_union() {
        let kb = kb_with_aliases(
            &[("a", &[("E0", 0.6), ("E1", 0.4)]), ("b", &[("E0", 0.9)])],
            &["E0", "E1"],
        );
        let corpus = load_one(
            r#"{"doc_id":"d","text":"a and b","mentions":[{"start":0,"end":1},{"start":6,"end":7}]}"#,
            &kb,
        );
        let doc = &corpus.documents[0];
        assert_eq!(doc.candidate_union, vec!["E0", "E1"]);
        assert_eq!(doc.first_mention, vec![0, 0]);
    }

    #[test]
    fn span_out_of_bounds_is_error() {
        let kb = kb_with_aliases(&[("a", &[("E0", 1.0)])], &["E0"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"doc_id":"d","text":"ab","mentions":[{{"start":0,"end":9}}]}}"#
        )
        .unwrap();
        assert!(matches!(
            load_corpus(f.path(), &kb),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn unknown_gold_counted_not_fatal() {
        let kb = kb_with_aliases(&[("a", &[("E0", 1.0)])], &["E0"]);
        let corpus = load_one(
            r#"{"doc_id":"d","text":"a here","mentions":[{"start":0,"end":1,"gold":"MISSING"}]}"#,
            &kb,
        );
        assert_eq!(corpus.stats.unknown_gold, 1);
        assert_eq!(corpus.documents[0].mentions.len(), 1);
    }

    #[test]
    fn context_window_clips_at_start() {
        let kb = kb_with_aliases(&[("a", &[("E0", 1.0)])], &["E0"]);
        let corpus = load_one(
            r#"{"doc_id":"d","text":"a one two three","mentions":[{"start":0,"end":1}]}"#,
            &kb,
        );
        let doc = &corpus.documents[0];
        let ctx = context_window(doc, &doc.mentions[0], 10);
        assert_eq!(ctx, vec!["one", "two", "three"]);
    }

    #[test]
    fn context_window_zero_is_empty() {
        let kb = kb_with_aliases(&[("a", &[("E0", 1.0)])], &["E0"]);
        let corpus = load_one(
            r#"{"doc_id":"d","text":"x a y","mentions":[{"start":2,"end":3}]}"#,
            &kb,
        );
        let doc = &corpus.documents[0];
        assert!(context_window(doc, &doc.mentions[0], 0).is_empty());
    }

    #[test]
    fn context_window_takes_both_sides() {
        let kb = kb_with_aliases(&[("m", &[("E0", 1.0)])], &["E0"]);
        let text = "a b c d e m f g h i j";
        let corpus = load_one(
            &format!(
                r#"{{"doc_id":"d","text":"{text}","mentions":[{{"start":10,"end":11}}]}}"#
            ),
            &kb,
        );
        let doc = &corpus.documents[0];
        let ctx = context_window(doc, &doc.mentions[0], 10);
        // 5 tokens available on each side
        assert_eq!(ctx.len(), 10);
        assert!(!ctx.contains(&"m".to_string()));
    }

    #[test]
    fn document_prefix_clips() {
        let kb = kb_with_aliases(&[("a", &[("E0", 1.0)])], &["E0"]);
        let words: Vec<String> = (0..250).map(|i| format!("w{i}")).collect();
        let corpus = load_one(
            &format!(
                r#"{{"doc_id":"d","text":"a {}","mentions":[{{"start":0,"end":1}}]}}"#,
                words.join(" ")
            ),
            &kb,
        );
        let doc = &corpus.documents[0];
        assert_eq!(document_prefix(doc, 100).len(), 100);
        assert_eq!(document_prefix(doc, 1000).len(), 251);
        assert!(document_prefix(doc, 0).is_empty());
    }

    #[test]
    fn reload_is_deterministic() {
        let kb = kb_with_aliases(
            &[("a", &[("E0", 0.5), ("E1", 0.3), ("E2", 0.2)])],
            &["E0", "E1", "E2"],
        );
        let json =
            r#"{"doc_id":"d","text":"a here","mentions":[{"start":0,"end":1,"gold":"E0"}]}"#;
        let c1 = load_one(json, &kb);
        let c2 = load_one(json, &kb);
        assert_eq!(
            c1.documents[0].mentions[0].candidates,
            c2.documents[0].mentions[0].candidates
        );
        assert_eq!(c1.documents[0].candidate_union, c2.documents[0].candidate_union);
    }

    #[test]
    fn counts_balance() {
        let kb = kb_with_aliases(&[("a", &[("E0", 1.0)])], &["E0"]);
        let corpus = load_one(
            r#"{"doc_id":"d","text":"a and borp","mentions":[{"start":0,"end":1},{"start":6,"end":10}]}"#,
            &kb,
        );
        let s = corpus.stats;
        assert_eq!(s.retained() + s.dropped_mentions, s.total_mentions);
        assert_eq!(s.retained(), 1);
    }
}
