//! Two-phase training: cross-entropy pretraining of the local scorer, then
//! fine-tuning under the walk-consistency regularizer, optimized with
//! per-document SGD and diagonal Adagrad.
//!
//! All gradients are computed analytically; [`grad_check`] verifies them
//! against central finite differences on tiny synthetic instances, skipping
//! coordinates whose perturbation crosses a ReLU or clamp kink.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::corpus::{Corpus, Document};
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{
    active_mask, build_transition, ScoreMatrix, SemanticVec, TransitionMatrix, TransitionMode,
};
use crate::kb::KnowledgeBase;
use crate::local::cosine_backward;
use crate::model::{
    apply_vec_grads, backward_local, score_document, semantic_vectors, DocScoring, EncodingDims,
    Grads, ModelParams, VecGrads,
};

/// Cross-entropy of the local distributions against one-hot gold labels.
/// Mentions without a gold label are skipped; mentions whose gold is not
/// among their candidates are excluded from the sum and counted.
pub fn loss_ce(doc: &Document, locals: &[Vec<f64>]) -> (f64, usize) {
    let mut loss = 0.0;
    let mut excluded = 0usize;
    for (mention, dist) in doc.mentions.iter().zip(locals) {
        let Some(gold) = &mention.gold else { continue };
        match mention.candidate_rank(gold) {
            Some(rank) => loss -= dist[rank].ln(),
            None => excluded += 1,
        }
    }
    (loss, excluded)
}

/// Squared residual between each mention's local distribution and its image
/// under `k` restart-free walk steps.
pub fn loss_consistency(
    doc: &Document,
    locals: &[Vec<f64>],
    t: &TransitionMatrix,
    k: usize,
) -> f64 {
    let p0 = embed_locals(doc, locals);
    p0.iter()
        .map(|col| {
            let q = walk(t, col, k);
            col.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum()
}

/// Place each mention's local distribution into the candidate-union rows.
fn embed_locals(doc: &Document, locals: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = doc.union_size();
    doc.mentions
        .iter()
        .zip(locals)
        .map(|(mention, dist)| {
            let mut col = vec![0.0; n];
            for ((id, _), &p) in mention.candidates.iter().zip(dist) {
                col[doc.union_index(id).expect("candidate in union")] += p;
            }
            col
        })
        .collect()
}

fn walk(t: &TransitionMatrix, p0: &[f64], k: usize) -> Vec<f64> {
    let mut q = p0.to_vec();
    for _ in 0..k {
        let mut next = vec![0.0; q.len()];
        t.mul_into(&q, &mut next);
        q = next;
    }
    q
}

/// Forward state of the consistency term for one document.
#[derive(Debug, Clone)]
pub struct ConsistencyEval {
    pub loss: f64,
    transition: TransitionMatrix,
    scores: ScoreMatrix,
    semantic: Vec<SemanticVec>,
    active: Vec<bool>,
    /// Per mention: the embedded local distribution.
    p0: Vec<Vec<f64>>,
    /// Per mention: `q_0 .. q_K` of the restart-free walk.
    traces: Vec<Vec<Vec<f64>>>,
    k: usize,
}

/// Full forward pass of one document under the phase-2 objective.
#[derive(Debug)]
pub struct DocEval {
    pub scoring: DocScoring,
    pub ce: f64,
    pub ce_excluded: usize,
    pub consistency: Option<ConsistencyEval>,
}

impl DocEval {
    pub fn objective(&self, w_ce: f64, w_cons: f64) -> f64 {
        w_ce * self.ce + w_cons * self.consistency.as_ref().map_or(0.0, |c| c.loss)
    }
}

pub fn eval_document(
    params: &ModelParams,
    kb: &KnowledgeBase,
    doc: &Document,
    cfg: &Config,
    with_consistency: bool,
) -> Result<DocEval> {
    let scoring = score_document(params, kb, doc, &cfg.encoding_dims())?;
    let (ce, ce_excluded) = loss_ce(doc, &scoring.locals);
    let consistency = if with_consistency && !doc.mentions.is_empty() && doc.union_size() > 0 {
        let active = active_mask(doc, &scoring.locals, cfg.walk_candidates);
        let semantic = match cfg.mode {
            TransitionMode::LinkOnly => Vec::new(),
            _ => semantic_vectors(params, doc, &scoring),
        };
        let (transition, scores, _mask) =
            build_transition(doc, kb, cfg.mode, &semantic, &active)?;
        let p0 = embed_locals(doc, &scoring.locals);
        let mut traces = Vec::with_capacity(p0.len());
        let mut loss = 0.0;
        for col in &p0 {
            let mut trace = Vec::with_capacity(cfg.k + 1);
            trace.push(col.clone());
            for _ in 0..cfg.k {
                let mut next = vec![0.0; col.len()];
                transition.mul_into(trace.last().unwrap(), &mut next);
                trace.push(next);
            }
            let last = trace.last().unwrap();
            loss += col
                .iter()
                .zip(last)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            traces.push(trace);
        }
        Some(ConsistencyEval {
            loss,
            transition,
            scores,
            semantic,
            active,
            p0,
            traces,
            k: cfg.k,
        })
    } else {
        None
    };
    Ok(DocEval {
        scoring,
        ce,
        ce_excluded,
        consistency,
    })
}

/// Accumulate the full document gradient: `w_ce * dCE + w_cons * dConsistency`.
pub fn backward_document(
    params: &ModelParams,
    doc: &Document,
    eval: &DocEval,
    w_ce: f64,
    w_cons: f64,
    grads: &mut Grads,
) {
    let mut grad_local: Vec<Vec<f64>> = eval
        .scoring
        .locals
        .iter()
        .map(|d| vec![0.0; d.len()])
        .collect();

    if w_ce != 0.0 {
        for (mi, mention) in doc.mentions.iter().enumerate() {
            let Some(gold) = &mention.gold else { continue };
            if let Some(rank) = mention.candidate_rank(gold) {
                grad_local[mi][rank] -= w_ce / eval.scoring.locals[mi][rank];
            }
        }
    }

    let mut vec_grads = VecGrads::zeros(doc, params.encoder.out_dim);

    if w_cons != 0.0 {
        if let Some(cons) = &eval.consistency {
            backward_consistency(params, doc, cons, w_cons, &mut grad_local, &mut vec_grads);
        }
    }

    backward_local(params, &eval.scoring, &grad_local, grads, &mut vec_grads);
    apply_vec_grads(params, &eval.scoring, &vec_grads, grads);
}

fn backward_consistency(
    params: &ModelParams,
    doc: &Document,
    cons: &ConsistencyEval,
    w_cons: f64,
    grad_local: &mut [Vec<f64>],
    vec_grads: &mut VecGrads,
) {
    let n = doc.union_size();
    let t = &cons.transition;
    // gradient on present transition entries
    let mut g_t = vec![0.0; n * n];

    for (mi, trace) in cons.traces.iter().enumerate() {
        let p0 = &cons.p0[mi];
        let q_k = trace.last().unwrap();
        // residual r = p0 - q_K ; loss contribution w * ||r||^2
        let r: Vec<f64> = p0.iter().zip(q_k).map(|(a, b)| a - b).collect();
        // direct p0 occurrence
        let mut dp0: Vec<f64> = r.iter().map(|v| 2.0 * w_cons * v).collect();
        if cons.k > 0 {
            // reverse through the walk
            let mut g: Vec<f64> = r.iter().map(|v| -2.0 * w_cons * v).collect();
            for a in (0..cons.k).rev() {
                let q = &trace[a];
                for (j, col) in t.cols.iter().enumerate() {
                    let qj = q[j];
                    if qj == 0.0 {
                        continue;
                    }
                    for &(row, _) in col {
                        g_t[row * n + j] += g[row] * qj;
                    }
                }
                let mut g_prev = vec![0.0; n];
                t.mul_transpose_into(&g, &mut g_prev);
                g = g_prev;
            }
            for (a, b) in dp0.iter_mut().zip(&g) {
                *a += b;
            }
        }
        // map back onto the mention's own candidates
        for (rank, (id, _)) in doc.mentions[mi].candidates.iter().enumerate() {
            let idx = doc.union_index(id).expect("candidate in union");
            grad_local[mi][rank] += dp0[idx];
        }
    }

    // entry gradients -> raw score gradients through the column normalization
    let mut g_score = vec![0.0; n * n];
    for (j, col) in t.cols.iter().enumerate() {
        if col.is_empty() {
            continue;
        }
        let denom = t.denoms[j];
        let inner: f64 = col.iter().map(|&(row, tv)| g_t[row * n + j] * tv).sum();
        for &(row, _) in col {
            g_score[row * n + j] = (g_t[row * n + j] - inner) / denom;
        }
    }

    // pair gradients into the semantic cosine (no path in link-only mode);
    // the cosine operand is [title ; body] + pos, so each pair gradient
    // splits into a title half and a body half, the position part being
    // constant
    if cons.semantic.is_empty() {
        return;
    }
    let v = params.encoder.out_dim;
    let mut gu_i = vec![0.0; 2 * v];
    let mut gu_j = vec![0.0; 2 * v];
    for i in 0..n {
        for j in (i + 1)..n {
            if cons.scores.raw[i * n + j] <= 0.0 {
                continue; // clamp gate
            }
            let g_pair = g_score[i * n + j] + g_score[j * n + i];
            if g_pair == 0.0 {
                continue;
            }
            gu_i.iter_mut().for_each(|x| *x = 0.0);
            gu_j.iter_mut().for_each(|x| *x = 0.0);
            cosine_backward(
                &cons.semantic[i].augmented,
                &cons.semantic[j].augmented,
                &cons.scores.cos_cache[i * n + j],
                g_pair,
                &mut gu_i,
                &mut gu_j,
            );
            for d in 0..v {
                vec_grads.title[i][d] += gu_i[d];
                vec_grads.body[i][d] += gu_i[v + d];
                vec_grads.title[j][d] += gu_j[d];
                vec_grads.body[j][d] += gu_j[v + d];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub loss: f64,
    pub train_f1: Option<f64>,
    pub theta_norm: f64,
}

/// Diagonal Adagrad with per-parameter accumulators.
#[derive(Debug, Clone)]
pub struct AdaGrad {
    pub eta: f64,
    pub epsilon: f64,
    pub accum_embeddings: Vec<f64>,
    pub accum_filters: Vec<f64>,
    pub accum_w_local: Vec<f64>,
}

impl AdaGrad {
    pub fn new(params: &ModelParams, eta: f64, epsilon: f64) -> Self {
        Self {
            eta,
            epsilon,
            accum_embeddings: vec![0.0; params.embeddings.data.len()],
            accum_filters: vec![0.0; params.encoder.filters.len()],
            accum_w_local: vec![0.0; params.w_local.len()],
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads) {
        fn update(theta: &mut [f64], acc: &mut [f64], g: &[f64], eta: f64, eps: f64) {
            for i in 0..theta.len() {
                let gi = g[i];
                if gi == 0.0 {
                    continue;
                }
                acc[i] += gi * gi;
                theta[i] -= eta * gi / (acc[i].sqrt() + eps);
            }
        }
        update(
            &mut params.embeddings.data,
            &mut self.accum_embeddings,
            &grads.embeddings,
            self.eta,
            self.epsilon,
        );
        update(
            &mut params.encoder.filters,
            &mut self.accum_filters,
            &grads.filters,
            self.eta,
            self.epsilon,
        );
        update(
            &mut params.w_local,
            &mut self.accum_w_local,
            &grads.w_local,
            self.eta,
            self.epsilon,
        );
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdaGrad,
    pub log: Vec<EpochRecord>,
}

/// Micro-F1 of the purely local argmax over a corpus.
pub fn local_micro_f1(
    params: &ModelParams,
    kb: &KnowledgeBase,
    corpus: &Corpus,
    dims: &EncodingDims,
) -> Result<Option<f64>> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for doc in &corpus.documents {
        let scoring = score_document(params, kb, doc, dims)?;
        for (mention, dist) in doc.mentions.iter().zip(&scoring.locals) {
            let Some(gold) = &mention.gold else { continue };
            total += 1;
            let best = dist
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if mention.candidates[best].0 == *gold {
                correct += 1;
            }
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Train with the two-phase schedule, invoking `sink` after every epoch
/// (for checkpointing and logging).
pub fn train_with(
    corpus: &Corpus,
    kb: &KnowledgeBase,
    embeddings: EmbeddingTable,
    config: &Config,
    mut sink: impl FnMut(&EpochRecord, &ModelParams, &AdaGrad) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(
        embeddings,
        config.filters,
        config.filter_window,
        &mut rng,
    );
    let mut optimizer = AdaGrad::new(&params, config.eta, config.epsilon);
    let mut grads = Grads::zeros_like(&params);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..corpus.documents.len()).collect();
    let dims = config.encoding_dims();

    for phase in 1u8..=2 {
        let (epochs, w_ce, w_cons) = match phase {
            1 => (config.pretrain_epochs, 1.0, 0.0),
            _ => (config.finetune_epochs, 1.0 - config.gamma, config.gamma),
        };
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for &di in &order {
                let doc = &corpus.documents[di];
                if doc.mentions.is_empty() {
                    continue;
                }
                let eval = eval_document(&params, kb, doc, config, w_cons != 0.0)?;
                let loss = eval.objective(w_ce, w_cons);
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training diverged (non-finite loss) at document {:?}",
                        doc.doc_id
                    )));
                }
                epoch_loss += loss;
                grads.clear();
                backward_document(&params, doc, &eval, w_ce, w_cons, &mut grads);
                grads.add_l2(&params, config.alpha);
                optimizer.step(&mut params, &grads);
            }
            let train_f1 = local_micro_f1(&params, kb, corpus, &dims)?;
            let record = EpochRecord {
                phase,
                epoch,
                loss: epoch_loss,
                train_f1,
                theta_norm: params.l2_norm_squared().sqrt(),
            };
            sink(&record, &params, &optimizer)?;
            log.push(record);
            if let (Some(target), Some(f1)) = (config.early_stop_f1, train_f1) {
                if f1 >= target {
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        params,
        optimizer,
        log,
    })
}

/// Train without a per-epoch sink.
pub fn train(
    corpus: &Corpus,
    kb: &KnowledgeBase,
    embeddings: EmbeddingTable,
    config: &Config,
) -> Result<TrainOutcome> {
    train_with(corpus, kb, embeddings, config, |_, _, _| Ok(()))
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude in the group; relative errors are
    /// measured against this scale.
    pub grad_scale: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_error: f64,
}

/// Settings for one gradient-check instance.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    pub gamma: f64,
    pub k: usize,
    pub mode: TransitionMode,
    pub seed: u64,
}

/// Compare the analytic gradient of the full phase-2 objective against
/// central finite differences on a tiny synthetic instance. Coordinates
/// whose perturbation flips any ReLU/clamp branch or the walk pruning are
/// skipped; relative errors are measured against the gradient scale of each
/// parameter group.
pub fn grad_check(settings: &GradCheckSettings) -> Result<GradCheckReport> {
    let instance = crate::synth::grad_check_instance(settings.seed)?;
    let mut config = Config::default();
    config.gamma = settings.gamma;
    config.k = settings.k;
    config.mode = settings.mode;
    config.alpha = 1e-5;
    config.context_window = 3;
    config.prefix_tokens = 12;
    config.walk_candidates = 4;

    let kb = &instance.kb;
    let corpus = &instance.corpus;
    let params = instance.params;

    let w_ce = 1.0 - config.gamma;
    let w_cons = config.gamma;

    let objective = |p: &ModelParams| -> Result<(f64, u64)> {
        let mut total = config.alpha * p.l2_norm_squared();
        let mut sig = Fnv::new();
        for doc in &corpus.documents {
            let eval = eval_document(p, kb, doc, &config, w_cons != 0.0)?;
            total += eval.objective(w_ce, w_cons);
            signature_of(&eval, &mut sig);
        }
        Ok((total, sig.finish()))
    };

    // analytic gradient at the base point
    let mut grads = Grads::zeros_like(&params);
    for doc in &corpus.documents {
        let eval = eval_document(&params, kb, doc, &config, w_cons != 0.0)?;
        backward_document(&params, doc, &eval, w_ce, w_cons, &mut grads);
    }
    grads.add_l2(&params, config.alpha);

    let (_, base_sig) = objective(&params)?;
    let step = 1e-4;
    let pad = params.embeddings.pad_row();
    let dim = params.embeddings.dim;

    let mut groups = Vec::new();
    let mut overall: f64 = 0.0;
    let group_specs: [(&'static str, usize, &[f64]); 3] = [
        ("embeddings", params.embeddings.data.len(), &grads.embeddings),
        ("filters", params.encoder.filters.len(), &grads.filters),
        ("w_local", params.w_local.len(), &grads.w_local),
    ];
    for (name, len, analytic) in group_specs {
        let scale = analytic
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-6);
        let mut max_rel: f64 = 0.0;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for i in 0..len {
            if name == "embeddings" && i / dim == pad {
                continue; // frozen
            }
            let mut plus = params.clone();
            let mut minus = params.clone();
            match name {
                "embeddings" => {
                    plus.embeddings.data[i] += step;
                    minus.embeddings.data[i] -= step;
                }
                "filters" => {
                    plus.encoder.filters[i] += step;
                    minus.encoder.filters[i] -= step;
                }
                _ => {
                    plus.w_local[i] += step;
                    minus.w_local[i] -= step;
                }
            }
            let (fp, sp) = objective(&plus)?;
            let (fm, sm) = objective(&minus)?;
            if sp != base_sig || sm != base_sig {
                skipped += 1;
                continue;
            }
            let fd = (fp - fm) / (2.0 * step);
            let denom = scale.max(fd.abs());
            let rel = (fd - analytic[i]).abs() / denom;
            max_rel = max_rel.max(rel);
            checked += 1;
        }
        overall = overall.max(max_rel);
        groups.push(GroupReport {
            name,
            max_rel_error: max_rel,
            grad_scale: scale,
            checked,
            skipped,
        });
    }

    Ok(GradCheckReport {
        groups,
        max_rel_error: overall,
    })
}

/// FNV-1a accumulator used for activation-pattern signatures.
pub(crate) struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn push(&mut self, byte: u8) {
        self.0 ^= byte as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn push_bit(&mut self, bit: bool) {
        self.push(bit as u8);
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Hash every non-smooth branch taken during the forward pass.
pub(crate) fn signature_of(eval: &DocEval, sig: &mut Fnv) {
    let mut caches: Vec<&crate::encoder::EncodeCache> = vec![&eval.scoring.document.1];
    for m in &eval.scoring.mentions {
        caches.push(&m.surface.1);
        caches.push(&m.context.1);
    }
    for e in &eval.scoring.entities {
        caches.push(&e.title.1);
        caches.push(&e.body.1);
    }
    for c in caches {
        for &z in &c.preact {
            sig.push_bit(z > 0.0);
        }
    }
    if let Some(cons) = &eval.consistency {
        for &a in &cons.active {
            sig.push_bit(a);
        }
        for &r in &cons.scores.raw {
            sig.push_bit(r > 0.0);
        }
    }
}
