//! Document-local transition matrix construction and recurrent random-walk
//! evidence propagation.
//!
//! The transition matrix is column-stochastic: column `j` holds the outgoing
//! evidence distribution of candidate `j`, so multiplying it into a
//! probability column conserves mass. A candidate may propagate only to
//! candidates of mentions it does not itself belong to; candidates pruned
//! from the walk (below the per-mention cutoff) keep their initial mass but
//! are isolated. Mass sitting on a candidate with no outgoing edges is routed
//! entirely to the restart distribution, which keeps every column of the
//! evidence state a probability distribution at every step.

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::local::{cosine, CosCache};

/// How edge scores between candidate entities are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionMode {
    /// Link-overlap relatedness plus the learned semantic score.
    Full,
    /// Link-overlap relatedness only.
    LinkOnly,
    /// Learned semantic score only, no KB term.
    Learned,
}

impl TransitionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "link_only" | "link-only" => Ok(Self::LinkOnly),
            "learned" => Ok(Self::Learned),
            other => Err(Error::Config(format!(
                "unknown transition mode {other:?} (expected full, link_only, learned)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::LinkOnly => "link_only",
            Self::Learned => "learned",
        }
    }
}

/// Position-augmented page representation of one union candidate: the
/// encoder content `[title ; body]` plus the sinusoidal position vector of
/// the mention that introduced the candidate.
#[derive(Debug, Clone)]
pub struct SemanticVec {
    /// `content + pos`, the cosine operand.
    pub augmented: Vec<f64>,
    /// True when the content half was all zero; such operands score 0.
    pub content_zero: bool,
}

impl SemanticVec {
    pub fn new(content: &[f64], pos: &[f64]) -> Self {
        debug_assert_eq!(content.len(), pos.len());
        let content_zero = content.iter().all(|&v| v == 0.0);
        let augmented = content.iter().zip(pos).map(|(c, p)| c + p).collect();
        Self {
            augmented,
            content_zero,
        }
    }
}

/// Semantic relatedness of two candidates: cosine of their position-augmented
/// representations, 0 whenever either content representation is all zero.
pub fn sr_semantic(a: &SemanticVec, b: &SemanticVec) -> (f64, CosCache) {
    if a.content_zero || b.content_zero {
        return (0.0, CosCache::default());
    }
    cosine(&a.augmented, &b.augmented)
}

/// Which directed edges are permitted: `targets[j]` lists the union indices
/// `i` such that evidence may flow from candidate `j` to candidate `i`.
#[derive(Debug, Clone)]
pub struct NeighborMask {
    pub targets: Vec<Vec<usize>>,
}

impl NeighborMask {
    /// Build the mask from mention membership: `i` is a target of `j` when
    /// some mention contains `i` but not `j`, and both survive the walk
    /// pruning (`active`).
    pub fn from_document(doc: &Document, active: &[bool]) -> Self {
        let n = doc.union_size();
        // membership bitset per union candidate over mentions
        let m = doc.mentions.len();
        let mwords = m.div_ceil(64).max(1);
        let mut belongs = vec![vec![0u64; mwords]; n];
        for (mi, mention) in doc.mentions.iter().enumerate() {
            for (id, _) in &mention.candidates {
                if let Some(idx) = doc.union_index(id) {
                    belongs[idx][mi / 64] |= 1 << (mi % 64);
                }
            }
        }
        let mut targets = vec![Vec::new(); n];
        for j in 0..n {
            if !active[j] {
                continue;
            }
            for i in 0..n {
                if i == j || !active[i] {
                    continue;
                }
                // exists a mention containing i but not j
                let permitted = belongs[i]
                    .iter()
                    .zip(&belongs[j])
                    .any(|(bi, bj)| bi & !bj != 0);
                if permitted {
                    targets[j].push(i);
                }
            }
        }
        Self { targets }
    }
}

/// Raw (clamped) edge scores plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub n: usize,
    /// Symmetric pair score, `n x n`, clamped at zero.
    pub score: Vec<f64>,
    /// Pre-clamp sums, for gradient gating.
    pub raw: Vec<f64>,
    /// Cosine caches per pair (upper triangle mirrored).
    pub cos_cache: Vec<CosCache>,
    /// Semantic cosine values per pair (before any clamping).
    pub semantic: Vec<f64>,
}

impl ScoreMatrix {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.score[i * self.n + j]
    }
}

/// Compute pairwise candidate scores for a document under `mode`.
/// `semantic` must hold one [`SemanticVec`] per union candidate unless the
/// mode is [`TransitionMode::LinkOnly`], where it may be empty.
pub fn score_matrix(
    doc: &Document,
    kb: &KnowledgeBase,
    mode: TransitionMode,
    semantic: &[SemanticVec],
) -> Result<ScoreMatrix> {
    let n = doc.union_size();
    let mut score = vec![0.0; n * n];
    let mut raw = vec![0.0; n * n];
    let mut sem_vals = vec![0.0; n * n];
    let mut caches = vec![CosCache::default(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let link = match mode {
                TransitionMode::Learned => 0.0,
                _ => kb.sr_link(&doc.candidate_union[i], &doc.candidate_union[j])?,
            };
            let (sem, cache) = match mode {
                TransitionMode::LinkOnly => (0.0, CosCache::default()),
                _ => sr_semantic(&semantic[i], &semantic[j]),
            };
            let r = link + sem;
            let s = r.max(0.0);
            for (a, b) in [(i, j), (j, i)] {
                raw[a * n + b] = r;
                score[a * n + b] = s;
                sem_vals[a * n + b] = sem;
                caches[a * n + b] = cache;
            }
        }
    }
    Ok(ScoreMatrix {
        n,
        score,
        raw,
        cos_cache: caches,
        semantic: sem_vals,
    })
}

/// Column-stochastic sparse transition matrix over a document's candidate
/// union. `cols[j]` lists `(target row, ratio)` pairs summing to 1, or is
/// empty for candidates with no permitted outgoing evidence.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    pub n: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
    /// Normalization denominators, kept for backpropagation.
    pub denoms: Vec<f64>,
}

impl TransitionMatrix {
    /// Normalize raw scores into column distributions over permitted targets.
    /// Columns whose scores sum to zero stay empty.
    pub fn from_scores(scores: &ScoreMatrix, mask: &NeighborMask) -> Self {
        let n = scores.n;
        let mut cols = vec![Vec::new(); n];
        let mut denoms = vec![0.0; n];
        for j in 0..n {
            let denom: f64 = mask.targets[j].iter().map(|&i| scores.at(i, j)).sum();
            denoms[j] = denom;
            if denom <= 0.0 {
                continue;
            }
            cols[j] = mask.targets[j]
                .iter()
                .filter_map(|&i| {
                    let s = scores.at(i, j);
                    (s > 0.0).then_some((i, s / denom))
                })
                .collect();
        }
        Self { n, cols, denoms }
    }

    /// Build a matrix from an explicit dense column-major table (tests and
    /// oracles). Columns are used as given, without normalization.
    pub fn from_dense_columns(dense: &[Vec<f64>]) -> Self {
        let n = dense.len();
        let mut cols = vec![Vec::new(); n];
        for (j, col) in dense.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                if v != 0.0 {
                    cols[j].push((i, v));
                }
            }
        }
        let denoms = dense
            .iter()
            .map(|col| col.iter().sum::<f64>())
            .collect();
        Self { n, cols, denoms }
    }

    /// `y += self * p`
    pub fn mul_into(&self, p: &[f64], y: &mut [f64]) {
        debug_assert_eq!(p.len(), self.n);
        for (j, col) in self.cols.iter().enumerate() {
            let pj = p[j];
            if pj == 0.0 {
                continue;
            }
            for &(i, v) in col {
                y[i] += v * pj;
            }
        }
    }

    /// `y += self^T * p` (used by backward passes).
    pub fn mul_transpose_into(&self, p: &[f64], y: &mut [f64]) {
        for (j, col) in self.cols.iter().enumerate() {
            let mut acc = 0.0;
            for &(i, v) in col {
                acc += v * p[i];
            }
            y[j] += acc;
        }
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        self.cols[j].iter().map(|(_, v)| v).sum()
    }

    pub fn is_dangling(&self, j: usize) -> bool {
        self.cols[j].is_empty()
    }
}

/// Build the walk-pruned transition matrix for one document.
pub fn build_transition(
    doc: &Document,
    kb: &KnowledgeBase,
    mode: TransitionMode,
    semantic: &[SemanticVec],
    active: &[bool],
) -> Result<(TransitionMatrix, ScoreMatrix, NeighborMask)> {
    if doc.union_size() == 0 {
        return Err(Error::Contract(
            "build_transition requires a nonempty candidate union".into(),
        ));
    }
    let mask = NeighborMask::from_document(doc, active);
    let scores = score_matrix(doc, kb, mode, semantic)?;
    let t = TransitionMatrix::from_scores(&scores, &mask);
    Ok((t, scores, mask))
}

/// Per-mention evidence distributions over the candidate union.
#[derive(Debug, Clone)]
pub struct EvidenceState {
    /// `columns[i]` is the distribution for mention `i`.
    pub columns: Vec<Vec<f64>>,
    /// Restart distributions (the initial state).
    pub initial: Vec<Vec<f64>>,
    /// Iterations applied so far.
    pub k: usize,
    pub lambda: f64,
}

impl EvidenceState {
    /// Place each mention's local distribution into its own candidate rows.
    pub fn from_local(doc: &Document, p_locals: &[Vec<f64>], lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "restart weight must lie in [0, 1], got {lambda}"
            )));
        }
        let n = doc.union_size();
        let mut columns = Vec::with_capacity(doc.mentions.len());
        for (mention, dist) in doc.mentions.iter().zip(p_locals) {
            let mut col = vec![0.0; n];
            for ((id, _), &p) in mention.candidates.iter().zip(dist.iter()) {
                let idx = doc
                    .union_index(id)
                    .ok_or_else(|| Error::Contract(format!("candidate {id} missing from union")))?;
                col[idx] += p;
            }
            columns.push(col);
        }
        Ok(Self {
            initial: columns.clone(),
            columns,
            k: 0,
            lambda,
        })
    }
}

/// One propagation step with dangling-mass compensation: mass on candidates
/// with no outgoing edges behaves as if the restart weight were 1.
fn step(t: &TransitionMatrix, p: &[f64], p0: &[f64], lambda: f64) -> Vec<f64> {
    let mut y = vec![0.0; p.len()];
    t.mul_into(p, &mut y);
    let carried: f64 = y.iter().sum();
    let dangling = (1.0 - carried).max(0.0);
    let restart = lambda + (1.0 - lambda) * dangling;
    for (yi, &p0i) in y.iter_mut().zip(p0) {
        *yi = (1.0 - lambda) * *yi + restart * p0i;
    }
    y
}

/// Run `k` propagation steps. `k = 0` returns the state unchanged.
pub fn propagate(mut state: EvidenceState, t: &TransitionMatrix, k: usize) -> EvidenceState {
    for _ in 0..k {
        for (col, init) in state.columns.iter_mut().zip(&state.initial) {
            *col = step(t, col, init, state.lambda);
        }
        state.k += 1;
    }
    state
}

/// Like [`propagate`] but records the state after every step, including the
/// initial one.
pub fn propagate_trace(
    mut state: EvidenceState,
    t: &TransitionMatrix,
    k: usize,
) -> Vec<EvidenceState> {
    let mut trace = Vec::with_capacity(k + 1);
    trace.push(state.clone());
    for _ in 0..k {
        for (col, init) in state.columns.iter_mut().zip(&state.initial) {
            *col = step(t, col, init, state.lambda);
        }
        state.k += 1;
        trace.push(state.clone());
    }
    trace
}

/// Solve the stationary equation `p = (1-lambda) T p + lambda p0` directly
/// with dense Gaussian elimination. Test oracle for [`propagate`].
pub fn fixed_point(t: &TransitionMatrix, p0: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config(format!(
            "fixed_point requires restart weight in (0, 1], got {lambda}"
        )));
    }
    let n = t.n;
    // dense A = I - (1-lambda) T
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for (j, col) in t.cols.iter().enumerate() {
        for &(i, v) in col {
            a[i * n + j] -= (1.0 - lambda) * v;
        }
    }
    let mut b: Vec<f64> = p0.iter().map(|v| v * lambda).collect();

    // Gaussian elimination with partial pivoting
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in (col + 1)..n {
            let mag = a[row * n + col].abs();
            if mag > best {
                best = mag;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return Err(Error::Numeric("singular propagation system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// One chosen entity for one mention.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub mention_index: usize,
    pub entity: String,
    /// Final probability renormalized over the mention's own candidates.
    pub score: f64,
}

/// Read off the argmax entity for every mention, with scores renormalized
/// over each mention's candidate set. Ties resolve to the higher-prior
/// candidate.
pub fn decide(state: &EvidenceState, doc: &Document) -> Vec<Decision> {
    doc.mentions
        .iter()
        .enumerate()
        .map(|(mi, mention)| {
            let col = &state.columns[mi];
            let mut total = 0.0;
            let mut best: Option<(usize, f64)> = None;
            for (rank, (id, _)) in mention.candidates.iter().enumerate() {
                let idx = doc.union_index(id).expect("candidate indexed in union");
                let mass = col[idx];
                total += mass;
                if best.map_or(true, |(_, b)| mass > b) {
                    best = Some((rank, mass));
                }
            }
            let (rank, mass) = best.expect("mentions always retain candidates");
            Decision {
                mention_index: mi,
                entity: mention.candidates[rank].0.clone(),
                score: if total > 0.0 { mass / total } else { 0.0 },
            }
        })
        .collect()
}

/// Walk pruning: keep the `limit` highest-scoring candidates of each mention
/// (by local probability), returning an active mask over the union.
pub fn active_mask(doc: &Document, p_locals: &[Vec<f64>], limit: usize) -> Vec<bool> {
    let mut active = vec![false; doc.union_size()];
    for (mention, dist) in doc.mentions.iter().zip(p_locals) {
        let mut ranked: Vec<(usize, f64)> = dist.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        for &(rank, _) in ranked.iter().take(limit) {
            let id = &mention.candidates[rank].0;
            if let Some(idx) = doc.union_index(id) {
                active[idx] = true;
            }
        }
    }
    active
}
