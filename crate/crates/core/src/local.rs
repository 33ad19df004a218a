//! Local mention-to-entity compatibility: sparse statistical features,
//! encoder cosine features, the sigmoid scorer, and its normalization into
//! a per-mention probability distribution.

use crate::corpus::Mention;
use crate::error::{Error, Result};
use crate::kb::{EntityPage, KnowledgeBase};

/// Number of sparse feature components per (mention, candidate) pair.
pub const SPARSE_DIM: usize = 8;
/// Number of cosine features per pair.
pub const CNN_DIM: usize = 6;
/// Total input width of the local scorer.
pub const LOCAL_DIM: usize = SPARSE_DIM + CNN_DIM;

/// Statistical features of a (mention, candidate) pair:
/// prior, log prior rank, surface/title edit similarity, exact match,
/// containment, context/title Jaccard, context/body Jaccard, log inlinks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseFeatures(pub [f64; SPARSE_DIM]);

pub fn sparse_features(
    kb: &KnowledgeBase,
    mention: &Mention,
    rank: usize,
    page: &EntityPage,
    prior: f64,
    context: &[String],
    body_prefix: &[String],
) -> SparseFeatures {
    let surface_str = mention.surface.join(" ");
    let title_str = page.title.join(" ");
    let edit_sim = 1.0 - normalized_levenshtein(&surface_str, &title_str);
    let exact = if mention.surface == page.title { 1.0 } else { 0.0 };
    let contains = if !surface_str.is_empty()
        && !title_str.is_empty()
        && (surface_str.contains(&title_str) || title_str.contains(&surface_str))
    {
        1.0
    } else {
        0.0
    };
    SparseFeatures([
        prior,
        ((rank + 1) as f64).ln(),
        edit_sim,
        exact,
        contains,
        jaccard(context, &page.title),
        jaccard(context, body_prefix),
        (1.0 + kb.inlink_count(&page.id) as f64).ln(),
    ])
}

/// Jaccard overlap of two token multisets treated as sets; two empty sets
/// score 0 (no evidence).
fn jaccard(a: &[String], b: &[String]) -> f64 {
    use std::collections::HashSet;
    let sa: HashSet<&str> = a.iter().map(|s| s.as_str()).collect();
    let sb: HashSet<&str> = b.iter().map(|s| s.as_str()).collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Levenshtein distance over chars divided by the longer length.
fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let ac: Vec<char> = a.chars().collect();
    let bc: Vec<char> = b.chars().collect();
    if ac.is_empty() && bc.is_empty() {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=bc.len()).collect();
    let mut cur = vec![0usize; bc.len() + 1];
    for (i, &ca) in ac.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in bc.iter().enumerate() {
            let cost = if ca == cb { 0 } else { 1 };
            cur[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[bc.len()] as f64 / ac.len().max(bc.len()) as f64
}

/// Cached pieces of one cosine computation, enough to backpropagate.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosCache {
    pub dot: f64,
    pub norm_a: f64,
    pub norm_b: f64,
}

/// Cosine similarity; any zero-norm operand makes the result (and its
/// gradient) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> (f64, CosCache) {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cache = CosCache {
        dot,
        norm_a: na,
        norm_b: nb,
    };
    if na == 0.0 || nb == 0.0 {
        (0.0, cache)
    } else {
        ((dot / (na * nb)).clamp(-1.0, 1.0), cache)
    }
}

/// Accumulate `grad * d cos(a,b)/da` into `ga` and the symmetric term into `gb`.
pub fn cosine_backward(
    a: &[f64],
    b: &[f64],
    cache: &CosCache,
    grad: f64,
    ga: &mut [f64],
    gb: &mut [f64],
) {
    if cache.norm_a == 0.0 || cache.norm_b == 0.0 || grad == 0.0 {
        return;
    }
    let inv = 1.0 / (cache.norm_a * cache.norm_b);
    let cos = cache.dot * inv;
    let ia2 = 1.0 / (cache.norm_a * cache.norm_a);
    let ib2 = 1.0 / (cache.norm_b * cache.norm_b);
    for i in 0..a.len() {
        ga[i] += grad * (b[i] * inv - cos * a[i] * ia2);
        gb[i] += grad * (a[i] * inv - cos * b[i] * ib2);
    }
}

/// The six cosine features in fixed order:
/// `[cos(s,t), cos(c,t), cos(d,t), cos(s,b), cos(c,b), cos(d,b)]`.
pub fn cnn_features(
    surface: &[f64],
    context: &[f64],
    document: &[f64],
    title: &[f64],
    body: &[f64],
) -> ([f64; CNN_DIM], [CosCache; CNN_DIM]) {
    let mut values = [0.0; CNN_DIM];
    let mut caches = [CosCache::default(); CNN_DIM];
    let pairs: [(&[f64], &[f64]); CNN_DIM] = [
        (surface, title),
        (context, title),
        (document, title),
        (surface, body),
        (context, body),
        (document, body),
    ];
    for (i, (a, b)) in pairs.iter().enumerate() {
        let (v, c) = cosine(a, b);
        values[i] = v;
        caches[i] = c;
    }
    (values, caches)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Relevance score for one candidate: sigmoid of the weighted concatenated
/// feature vector `[sparse ; cnn]`.
pub fn phi(sparse: &SparseFeatures, cnn: &[f64; CNN_DIM], w_local: &[f64]) -> f64 {
    debug_assert_eq!(w_local.len(), LOCAL_DIM);
    let mut z = 0.0;
    for (i, v) in sparse.0.iter().enumerate() {
        z += w_local[i] * v;
    }
    for (i, v) in cnn.iter().enumerate() {
        z += w_local[SPARSE_DIM + i] * v;
    }
    sigmoid(z)
}

/// Normalize per-candidate scores into a probability distribution.
pub fn p_local(phis: &[f64]) -> Result<Vec<f64>> {
    if phis.is_empty() {
        return Err(Error::Contract(
            "p_local requires at least one candidate".into(),
        ));
    }
    let sum: f64 = phis.iter().sum();
    Ok(phis.iter().map(|p| p / sum).collect())
}
