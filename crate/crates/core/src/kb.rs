//! Knowledge-base storage: entity pages, the hyperlink graph with its
//! inlink transpose, alias priors, and the link-overlap relatedness score.
//!
//! The KB file is line-delimited JSON, one record per line:
//!
//! ```text
//! {"type":"page","id":"...","title":"...","text":"...","outlinks":["..."]}
//! {"type":"alias","surface":"...","candidates":[["id",0.7],["id2",0.3]]}
//! ```
//!
//! A loaded [`KnowledgeBase`] is immutable; all methods take `&self` and the
//! type is `Send + Sync`, so concurrent readers need no coordination.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tokenize::{normalize_surface, tokenize};

/// One entity page: tokenized title and body plus its outgoing links.
#[derive(Debug, Clone)]
pub struct EntityPage {
    pub id: String,
    /// Title token sequence.
    pub title: Vec<String>,
    /// Full body token sequence; consumers truncate as needed.
    pub body: Vec<String>,
    pub outlinks: BTreeSet<String>,
}

/// Fully indexed knowledge base.
#[derive(Debug, Default)]
pub struct KnowledgeBase {
    pages: BTreeMap<String, EntityPage>,
    /// Exact transpose of the outlink relation.
    inlinks: HashMap<String, BTreeSet<String>>,
    /// Alias table keyed by normalized surface; candidate lists are sorted by
    /// prior descending, ties broken by entity id.
    aliases: HashMap<String, Vec<(String, f64)>>,
    /// Outlinks that referenced undefined ids and were dropped at load.
    pub dangling_outlinks: usize,
    /// Alias candidates that referenced undefined ids and were dropped at load.
    pub dangling_candidates: usize,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum KbRecord {
    Page {
        id: String,
        title: String,
        text: String,
        outlinks: Vec<String>,
    },
    Alias {
        surface: String,
        candidates: Vec<(String, f64)>,
    },
}

/// Load and index a KB file. Dangling outlinks and alias candidates are
/// dropped and counted rather than rejected; structural defects (bad JSON,
/// duplicate ids, invalid priors) are errors.
pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let file = File::open(path.as_ref())?;
    load_kb_reader(BufReader::new(file))
}

/// Parse a KB from in-memory line-delimited records.
pub fn load_kb_str(text: &str) -> Result<KnowledgeBase> {
    load_kb_reader(std::io::Cursor::new(text))
}

fn load_kb_reader(reader: impl BufRead) -> Result<KnowledgeBase> {
    let mut pages: BTreeMap<String, EntityPage> = BTreeMap::new();
    let mut raw_aliases: Vec<(usize, String, Vec<(String, f64)>)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: KbRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(lineno, format!("bad KB record: {e}")))?;
        match record {
            KbRecord::Page {
                id,
                title,
                text,
                outlinks,
            } => {
                if pages.contains_key(&id) {
                    return Err(Error::DuplicateId(id));
                }
                let page = EntityPage {
                    id: id.clone(),
                    title: tokenize(&title),
                    body: tokenize(&text),
                    outlinks: outlinks.into_iter().collect(),
                };
                pages.insert(id, page);
            }
            KbRecord::Alias {
                surface,
                candidates,
            } => {
                raw_aliases.push((lineno, surface, candidates));
            }
        }
    }

    // Drop outlinks to undefined entities, then build the inlink transpose.
    let ids: BTreeSet<String> = pages.keys().cloned().collect();
    let mut dangling_outlinks = 0usize;
    for page in pages.values_mut() {
        let before = page.outlinks.len();
        page.outlinks.retain(|t| ids.contains(t));
        dangling_outlinks += before - page.outlinks.len();
    }
    let mut inlinks: HashMap<String, BTreeSet<String>> = HashMap::new();
    for (id, page) in &pages {
        for target in &page.outlinks {
            inlinks
                .entry(target.clone())
                .or_default()
                .insert(id.clone());
        }
    }

    let mut aliases: HashMap<String, Vec<(String, f64)>> = HashMap::new();
    let mut dangling_candidates = 0usize;
    for (lineno, surface, candidates) in raw_aliases {
        let key = normalize_surface(&surface);
        if aliases.contains_key(&key) {
            return Err(Error::parse(
                lineno,
                format!("duplicate alias surface {key:?}"),
            ));
        }
        let mut kept: Vec<(String, f64)> = Vec::with_capacity(candidates.len());
        let mut sum = 0.0;
        for (id, prior) in candidates {
            if !ids.contains(&id) {
                dangling_candidates += 1;
                continue;
            }
            if !(prior > 0.0) || !prior.is_finite() {
                return Err(Error::parse(
                    lineno,
                    format!("alias {key:?}: prior for {id} must be positive, got {prior}"),
                ));
            }
            if kept.iter().any(|(k, _)| k == &id) {
                return Err(Error::parse(
                    lineno,
                    format!("alias {key:?}: duplicate candidate {id}"),
                ));
            }
            sum += prior;
            kept.push((id, prior));
        }
        if sum > 1.0 + 1e-6 {
            return Err(Error::parse(
                lineno,
                format!("alias {key:?}: priors sum to {sum}, exceeding 1"),
            ));
        }
        sort_candidates(&mut kept);
        aliases.insert(key, kept);
    }

    Ok(KnowledgeBase {
        pages,
        inlinks,
        aliases,
        dangling_outlinks,
        dangling_candidates,
    })
}

/// Prior-descending order with id tie-break, shared by alias loading and
/// candidate pruning.
pub fn sort_candidates(candidates: &mut [(String, f64)]) {
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
}

impl KnowledgeBase {
    pub fn total_entities(&self) -> usize {
        self.pages.len()
    }

    pub fn page(&self, id: &str) -> Option<&EntityPage> {
        self.pages.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.pages.contains_key(id)
    }

    /// Pages in id order.
    pub fn pages(&self) -> impl Iterator<Item = &EntityPage> {
        self.pages.values()
    }

    /// The set of entities linking to `id` (empty set if none).
    pub fn inlinks(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.inlinks.get(id)
    }

    pub fn inlink_count(&self, id: &str) -> usize {
        self.inlinks.get(id).map_or(0, |s| s.len())
    }

    /// Alias surfaces in normalized form, sorted (for deterministic export).
    pub fn alias_surfaces(&self) -> Vec<&str> {
        let mut keys: Vec<&str> = self.aliases.keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        keys
    }

    /// Candidate entities for a surface string, sorted by prior descending.
    /// Unknown surfaces yield an empty list.
    pub fn candidate_priors(&self, surface: &str) -> &[(String, f64)] {
        self.aliases
            .get(&normalize_surface(surface))
            .map_or(&[], |v| v.as_slice())
    }

    /// Link-overlap relatedness of two entities, in `[0, 1]`.
    ///
    /// Computed from the inlink sets `I`, `J` and the KB size `|W|` as
    /// `1 - (ln max(|I|,|J|) - ln |I∩J|) / (ln |W| - ln min(|I|,|J|))`,
    /// clamped to `[0, 1]`. Degenerate inputs (empty intersection, or
    /// `min(|I|,|J|) = |W|` where the denominator vanishes) score 0.
    pub fn sr_link(&self, i: &str, j: &str) -> Result<f64> {
        let set_i = self
            .inlinks_checked(i)
            .ok_or_else(|| Error::UnknownEntity(i.to_string()))?;
        let set_j = self
            .inlinks_checked(j)
            .ok_or_else(|| Error::UnknownEntity(j.to_string()))?;
        let total = self.total_entities();
        let inter = set_i.intersection(set_j).count();
        Ok(sr_link_from_counts(set_i.len(), set_j.len(), inter, total))
    }

    fn inlinks_checked(&self, id: &str) -> Option<&BTreeSet<String>> {
        if !self.pages.contains_key(id) {
            return None;
        }
        static EMPTY: std::sync::OnceLock<BTreeSet<String>> = std::sync::OnceLock::new();
        Some(
            self.inlinks
                .get(id)
                .unwrap_or_else(|| EMPTY.get_or_init(BTreeSet::new)),
        )
    }
}

/// The relatedness formula on raw set sizes. Exposed so tests can drive it
/// against set-arithmetic oracles without building a KB.
pub fn sr_link_from_counts(i_len: usize, j_len: usize, inter: usize, total: usize) -> f64 {
    let (max, min) = if i_len >= j_len {
        (i_len, j_len)
    } else {
        (j_len, i_len)
    };
    if inter == 0 || min == total {
        return 0.0;
    }
    let num = (max as f64).ln() - (inter as f64).ln();
    let den = (total as f64).ln() - (min as f64).ln();
    (1.0 - num / den).clamp(0.0, 1.0)
}
