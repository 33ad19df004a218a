//! Model parameters and the per-document scoring pipeline.
//!
//! [`score_document`] runs the full local forward pass, keeping every
//! intermediate needed to backpropagate exactly: encoder caches for the five
//! text granularities, cosine caches for the similarity features, and the
//! pre-sigmoid scores. Gradients flow back in two stages: task-level code
//! first accumulates gradients on the granularity vectors via
//! [`VecGrads`], then [`apply_vec_grads`] pushes them through the encoder
//! into parameter space.

use rand::Rng;

use crate::corpus::{context_window, document_prefix, Document};
use crate::encoder::{
    encode_backward, encode_with_cache, ConvEncoder, EmbeddingTable, EncodeCache,
    PositionalEncoding,
};
use crate::error::Result;
use crate::kb::KnowledgeBase;
use crate::local::{
    cnn_features, cosine_backward, p_local, sigmoid, sparse_features, CosCache, SparseFeatures,
    CNN_DIM, LOCAL_DIM, SPARSE_DIM,
};

/// Text-extraction widths used by both scoring and inference.
#[derive(Debug, Clone, Copy)]
pub struct EncodingDims {
    /// Context tokens taken on each side of a mention.
    pub context_window: usize,
    /// Token prefix used for the document granularity and entity bodies.
    pub prefix_tokens: usize,
}

impl Default for EncodingDims {
    fn default() -> Self {
        Self {
            context_window: 10,
            prefix_tokens: 100,
        }
    }
}

/// All trainable parameters.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub embeddings: EmbeddingTable,
    pub encoder: ConvEncoder,
    pub w_local: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: filter bank and scorer weights uniform in
    /// `(-0.01, 0.01)`, embeddings as given.
    pub fn init(
        embeddings: EmbeddingTable,
        out_dim: usize,
        window: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let encoder = ConvEncoder::seeded(out_dim, window, embeddings.dim, rng);
        let w_local = (0..LOCAL_DIM).map(|_| rng.gen_range(-0.01..0.01)).collect();
        Self {
            embeddings,
            encoder,
            w_local,
        }
    }

    pub fn positional(&self) -> PositionalEncoding {
        PositionalEncoding::new(2 * self.encoder.out_dim)
    }

    /// Squared L2 norm of all trainable parameters (frozen pad row excluded;
    /// it is identically zero).
    pub fn l2_norm_squared(&self) -> f64 {
        let emb: f64 = self.embeddings.data.iter().map(|v| v * v).sum();
        let filt: f64 = self.encoder.filters.iter().map(|v| v * v).sum();
        let w: f64 = self.w_local.iter().map(|v| v * v).sum();
        emb + filt + w
    }
}

/// Dense gradient buffers mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub embeddings: Vec<f64>,
    pub filters: Vec<f64>,
    pub w_local: Vec<f64>,
}

impl Grads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            embeddings: vec![0.0; params.embeddings.data.len()],
            filters: vec![0.0; params.encoder.filters.len()],
            w_local: vec![0.0; params.w_local.len()],
        }
    }

    pub fn clear(&mut self) {
        self.embeddings.iter_mut().for_each(|v| *v = 0.0);
        self.filters.iter_mut().for_each(|v| *v = 0.0);
        self.w_local.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Add the L2 regularizer gradient `2 * alpha * theta`.
    pub fn add_l2(&mut self, params: &ModelParams, alpha: f64) {
        if alpha == 0.0 {
            return;
        }
        let pad = params.embeddings.pad_row();
        let dim = params.embeddings.dim;
        for (i, g) in self.embeddings.iter_mut().enumerate() {
            if i / dim == pad {
                continue;
            }
            *g += 2.0 * alpha * params.embeddings.data[i];
        }
        for (g, p) in self.filters.iter_mut().zip(&params.encoder.filters) {
            *g += 2.0 * alpha * p;
        }
        for (g, p) in self.w_local.iter_mut().zip(&params.w_local) {
            *g += 2.0 * alpha * p;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.iter().all(|v| v.is_finite())
            && self.filters.iter().all(|v| v.is_finite())
            && self.w_local.iter().all(|v| v.is_finite())
    }
}

/// Forward-pass record for one candidate of one mention.
#[derive(Debug, Clone)]
pub struct CandidateScoring {
    pub union_idx: usize,
    pub sparse: SparseFeatures,
    pub cnn: [f64; CNN_DIM],
    pub cos_caches: [CosCache; CNN_DIM],
    /// Pre-sigmoid score.
    pub z: f64,
    pub phi: f64,
}

/// Forward-pass record for one mention.
#[derive(Debug, Clone)]
pub struct MentionScoring {
    pub surface: (Vec<f64>, EncodeCache),
    pub context: (Vec<f64>, EncodeCache),
    pub context_tokens: Vec<String>,
    pub candidates: Vec<CandidateScoring>,
}

/// Forward-pass record for one union entity.
#[derive(Debug, Clone)]
pub struct EntityScoring {
    pub title: (Vec<f64>, EncodeCache),
    pub body: (Vec<f64>, EncodeCache),
}

/// Full forward pass over a document.
#[derive(Debug, Clone)]
pub struct DocScoring {
    pub document: (Vec<f64>, EncodeCache),
    pub mentions: Vec<MentionScoring>,
    /// Indexed by candidate-union position.
    pub entities: Vec<EntityScoring>,
    /// Local probability distribution per mention, aligned with candidates.
    pub locals: Vec<Vec<f64>>,
}

/// Run the local scorer over every mention of `doc`.
pub fn score_document(
    params: &ModelParams,
    kb: &KnowledgeBase,
    doc: &Document,
    dims: &EncodingDims,
) -> Result<DocScoring> {
    let enc = &params.encoder;
    let emb = &params.embeddings;

    let doc_tokens = document_prefix(doc, dims.prefix_tokens);
    let document = encode_with_cache(enc, emb, doc_tokens);

    let mut entities = Vec::with_capacity(doc.union_size());
    for id in &doc.candidate_union {
        let page = kb
            .page(id)
            .ok_or_else(|| crate::error::Error::UnknownEntity(id.clone()))?;
        let title = encode_with_cache(enc, emb, &page.title);
        let body_prefix = &page.body[..dims.prefix_tokens.min(page.body.len())];
        let body = encode_with_cache(enc, emb, body_prefix);
        entities.push(EntityScoring { title, body });
    }

    let mut mentions = Vec::with_capacity(doc.mentions.len());
    let mut locals = Vec::with_capacity(doc.mentions.len());
    for mention in &doc.mentions {
        let context_tokens = context_window(doc, mention, dims.context_window);
        let surface = encode_with_cache(enc, emb, &mention.surface);
        let context = encode_with_cache(enc, emb, &context_tokens);

        let mut candidates = Vec::with_capacity(mention.candidates.len());
        let mut phis = Vec::with_capacity(mention.candidates.len());
        for (rank, (id, prior)) in mention.candidates.iter().enumerate() {
            let union_idx = doc
                .union_index(id)
                .expect("candidates are always in the union");
            let page = kb.page(id).expect("union ids exist in the KB");
            let body_prefix = &page.body[..dims.prefix_tokens.min(page.body.len())];
            let sparse = sparse_features(
                kb,
                mention,
                rank,
                page,
                *prior,
                &context_tokens,
                body_prefix,
            );
            let (cnn, cos_caches) = cnn_features(
                &surface.0,
                &context.0,
                &document.0,
                &entities[union_idx].title.0,
                &entities[union_idx].body.0,
            );
            let mut z = 0.0;
            for (i, v) in sparse.0.iter().enumerate() {
                z += params.w_local[i] * v;
            }
            for (i, v) in cnn.iter().enumerate() {
                z += params.w_local[SPARSE_DIM + i] * v;
            }
            let phi = sigmoid(z);
            phis.push(phi);
            candidates.push(CandidateScoring {
                union_idx,
                sparse,
                cnn,
                cos_caches,
                z,
                phi,
            });
        }
        locals.push(p_local(&phis)?);
        mentions.push(MentionScoring {
            surface,
            context,
            context_tokens,
            candidates,
        });
    }

    Ok(DocScoring {
        document,
        mentions,
        entities,
        locals,
    })
}

/// Gradients accumulated on the granularity vectors of one document, prior
/// to the encoder backward pass.
#[derive(Debug, Clone)]
pub struct VecGrads {
    pub surface: Vec<Vec<f64>>,
    pub context: Vec<Vec<f64>>,
    pub document: Vec<f64>,
    pub title: Vec<Vec<f64>>,
    pub body: Vec<Vec<f64>>,
}

impl VecGrads {
    pub fn zeros(doc: &Document, out_dim: usize) -> Self {
        Self {
            surface: vec![vec![0.0; out_dim]; doc.mentions.len()],
            context: vec![vec![0.0; out_dim]; doc.mentions.len()],
            document: vec![0.0; out_dim],
            title: vec![vec![0.0; out_dim]; doc.union_size()],
            body: vec![vec![0.0; out_dim]; doc.union_size()],
        }
    }
}

/// Backpropagate a gradient on the local distributions into scorer weights
/// and granularity-vector gradients.
///
/// `grad_local[i][r]` is `dL/d p_local(candidate r | mention i)`.
pub fn backward_local(
    params: &ModelParams,
    scoring: &DocScoring,
    grad_local: &[Vec<f64>],
    grads: &mut Grads,
    vec_grads: &mut VecGrads,
) {
    for (mi, mention) in scoring.mentions.iter().enumerate() {
        let phis: Vec<f64> = mention.candidates.iter().map(|c| c.phi).collect();
        let sum: f64 = phis.iter().sum();
        let probs = &scoring.locals[mi];
        let g = &grad_local[mi];
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        // normalization backward: dL/dphi_r = (g_r - sum_k g_k p_k) / sum
        let dot: f64 = g.iter().zip(probs).map(|(a, b)| a * b).sum();
        for (r, cand) in mention.candidates.iter().enumerate() {
            let dphi = (g[r] - dot) / sum;
            if dphi == 0.0 {
                continue;
            }
            let dz = dphi * cand.phi * (1.0 - cand.phi);
            // weights: z = w . [sparse ; cnn]
            for (i, v) in cand.sparse.0.iter().enumerate() {
                grads.w_local[i] += dz * v;
            }
            for (i, v) in cand.cnn.iter().enumerate() {
                grads.w_local[SPARSE_DIM + i] += dz * v;
            }
            // cosine features back to granularity vectors
            let e = cand.union_idx;
            let pairs: [(&[f64], &[f64]); CNN_DIM] = [
                (&mention.surface.0, &scoring.entities[e].title.0),
                (&mention.context.0, &scoring.entities[e].title.0),
                (&scoring.document.0, &scoring.entities[e].title.0),
                (&mention.surface.0, &scoring.entities[e].body.0),
                (&mention.context.0, &scoring.entities[e].body.0),
                (&scoring.document.0, &scoring.entities[e].body.0),
            ];
            for (f, (a, b)) in pairs.iter().enumerate() {
                let gcos = dz * params.w_local[SPARSE_DIM + f];
                if gcos == 0.0 {
                    continue;
                }
                // split mutable borrows by feature index
                let (ga, gb): (&mut Vec<f64>, &mut Vec<f64>) = match f {
                    0 => (&mut vec_grads.surface[mi], &mut vec_grads.title[e]),
                    1 => (&mut vec_grads.context[mi], &mut vec_grads.title[e]),
                    2 => (&mut vec_grads.document, &mut vec_grads.title[e]),
                    3 => (&mut vec_grads.surface[mi], &mut vec_grads.body[e]),
                    4 => (&mut vec_grads.context[mi], &mut vec_grads.body[e]),
                    _ => (&mut vec_grads.document, &mut vec_grads.body[e]),
                };
                cosine_backward(a, b, &cand.cos_caches[f], gcos, ga, gb);
            }
        }
    }
}

/// Position-augmented page representations for every union candidate:
/// `[title ; body] + pos(first mention ordinal)`.
pub fn semantic_vectors(
    params: &ModelParams,
    doc: &Document,
    scoring: &DocScoring,
) -> Vec<crate::graph::SemanticVec> {
    let pe = params.positional();
    let v = params.encoder.out_dim;
    (0..doc.union_size())
        .map(|e| {
            let mut content = Vec::with_capacity(2 * v);
            content.extend_from_slice(&scoring.entities[e].title.0);
            content.extend_from_slice(&scoring.entities[e].body.0);
            let pos = pe.vector(doc.first_mention[e]);
            crate::graph::SemanticVec::new(&content, &pos)
        })
        .collect()
}

/// Push accumulated granularity-vector gradients through the encoder.
pub fn apply_vec_grads(
    params: &ModelParams,
    scoring: &DocScoring,
    vec_grads: &VecGrads,
    grads: &mut Grads,
) {
    let enc = &params.encoder;
    let emb = &params.embeddings;
    let run = |cache: &EncodeCache, g: &[f64], grads: &mut Grads| {
        if g.iter().all(|&v| v == 0.0) {
            return;
        }
        encode_backward(enc, emb, cache, g, &mut grads.filters, &mut grads.embeddings);
    };
    run(&scoring.document.1, &vec_grads.document, grads);
    for (mi, m) in scoring.mentions.iter().enumerate() {
        run(&m.surface.1, &vec_grads.surface[mi], grads);
        run(&m.context.1, &vec_grads.context[mi], grads);
    }
    for (e, ent) in scoring.entities.iter().enumerate() {
        run(&ent.title.1, &vec_grads.title[e], grads);
        run(&ent.body.1, &vec_grads.body[e], grads);
    }
}
