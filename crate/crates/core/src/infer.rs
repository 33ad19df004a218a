//! Inference: run the local scorer and the random walk over a corpus and
//! read off per-mention decisions.

use crate::corpus::{Corpus, Document};
use crate::error::Result;
use crate::eval::Prediction;
use crate::graph::{
    active_mask, build_transition, decide, propagate, Decision, EvidenceState, TransitionMode,
};
use crate::kb::KnowledgeBase;
use crate::model::{score_document, semantic_vectors, EncodingDims, ModelParams};

#[derive(Debug, Clone, Copy)]
pub struct LinkOptions {
    pub k: usize,
    pub lambda: f64,
    pub mode: TransitionMode,
    pub dims: EncodingDims,
    /// Candidates per mention kept during propagation.
    pub walk_candidates: usize,
}

impl Default for LinkOptions {
    fn default() -> Self {
        Self {
            k: 5,
            lambda: 0.5,
            mode: TransitionMode::Full,
            dims: EncodingDims::default(),
            walk_candidates: 4,
        }
    }
}

/// Link every mention of one document.
pub fn link_document(
    params: &ModelParams,
    kb: &KnowledgeBase,
    doc: &Document,
    opts: &LinkOptions,
) -> Result<Vec<Decision>> {
    if doc.mentions.is_empty() {
        return Ok(Vec::new());
    }
    let scoring = score_document(params, kb, doc, &opts.dims)?;
    let state = EvidenceState::from_local(doc, &scoring.locals, opts.lambda)?;
    let state = if opts.k == 0 {
        state
    } else {
        let active = active_mask(doc, &scoring.locals, opts.walk_candidates);
        let semantic = match opts.mode {
            TransitionMode::LinkOnly => Vec::new(),
            _ => semantic_vectors(params, doc, &scoring),
        };
        let (t, _, _) = build_transition(doc, kb, opts.mode, &semantic, &active)?;
        propagate(state, &t, opts.k)
    };
    Ok(decide(&state, doc))
}

/// Link a whole corpus, producing prediction records ready for `eval`.
pub fn link_corpus(
    params: &ModelParams,
    kb: &KnowledgeBase,
    corpus: &Corpus,
    opts: &LinkOptions,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for doc in &corpus.documents {
        for d in link_document(params, kb, doc, opts)? {
            let mention = &doc.mentions[d.mention_index];
            out.push(Prediction {
                doc_id: doc.doc_id.clone(),
                mention_index: d.mention_index,
                entity: d.entity,
                score: d.score,
                start: Some(mention.char_span.0),
                end: Some(mention.char_span.1),
                k: Some(opts.k),
                mode: Some(opts.mode.as_str().to_string()),
            });
        }
    }
    Ok(out)
}
