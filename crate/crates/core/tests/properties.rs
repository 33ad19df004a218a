//! Property tests for the module invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use linkwalk_core::graph::{
    fixed_point, propagate, propagate_trace, EvidenceState, NeighborMask, ScoreMatrix,
    TransitionMatrix,
};
use linkwalk_core::kb::load_kb_str;
use linkwalk_core::local::{p_local, CosCache};
use linkwalk_core::synth::random_walk_system;

fn kb_from_edges(n: usize, edges: &[(usize, usize)]) -> linkwalk_core::KnowledgeBase {
    let mut lines = String::new();
    for i in 0..n {
        let outlinks: Vec<String> = edges
            .iter()
            .filter(|(s, _)| *s == i)
            .map(|(_, t)| format!("e{t}"))
            .collect();
        lines.push_str(
            &serde_json::json!({
                "type": "page", "id": format!("e{i}"), "title": format!("t{i}"),
                "text": "", "outlinks": outlinks
            })
            .to_string(),
        );
        lines.push('\n');
    }
    load_kb_str(&lines).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Link relatedness is symmetric, bounded, and maximal on identical
    /// nonempty inlink sets, over random small graphs.
    #[test]
    fn sr_link_invariants(
        n in 2usize..10,
        edges in proptest::collection::vec((0usize..10, 0usize..10), 0..40),
    ) {
        let edges: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(s, t)| *s < n && *t < n)
            .collect();
        let kb = kb_from_edges(n, &edges);
        for i in 0..n {
            for j in 0..n {
                let a = kb.sr_link(&format!("e{i}"), &format!("e{j}")).unwrap();
                let b = kb.sr_link(&format!("e{j}"), &format!("e{i}")).unwrap();
                prop_assert_eq!(a, b, "symmetry");
                prop_assert!((0.0..=1.0).contains(&a), "range: {}", a);
            }
            let inl = kb.inlink_count(&format!("e{i}"));
            let selfscore = kb.sr_link(&format!("e{i}"), &format!("e{i}")).unwrap();
            if inl > 0 && inl < kb.total_entities() {
                prop_assert_eq!(selfscore, 1.0, "self-relatedness");
            }
        }
    }
}

proptest! {
    /// Normalizing positive scores yields a distribution, preserves the
    /// ranking, and ignores positive rescaling.
    #[test]
    fn p_local_invariants(
        phis in proptest::collection::vec(1e-6f64..1.0, 1..8),
        scale in 1e-3f64..1e3,
    ) {
        let p = p_local(&phis).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = phis.iter().map(|v| v * scale).collect();
        let q = p_local(&scaled).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let argmax = |v: &[f64]| {
            v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0
        };
        prop_assert_eq!(argmax(&p), argmax(&phis));
    }
}

proptest! {
    /// Random nonnegative pair scores always normalize into columns that are
    /// stochastic or identically empty, and rescaling the scores changes
    /// nothing.
    #[test]
    fn transition_normalization_invariants(
        n in 2usize..8,
        raw in proptest::collection::vec(0.0f64..1.0, 64),
        scale in 1e-3f64..1e3,
    ) {
        let mut score = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = raw[i * 8 + j];
                score[i * n + j] = v;
                score[j * n + i] = v;
            }
        }
        let targets: Vec<Vec<usize>> = (0..n)
            .map(|j| (0..n).filter(|&i| i != j).collect())
            .collect();
        let mask = NeighborMask { targets };
        let build = |score: Vec<f64>| {
            let scores = ScoreMatrix {
                n,
                raw: score.clone(),
                score,
                cos_cache: vec![CosCache::default(); n * n],
                semantic: vec![0.0; n * n],
            };
            TransitionMatrix::from_scores(&scores, &mask)
        };
        let t = build(score.clone());
        for j in 0..n {
            let s = t.column_sum(j);
            prop_assert!(t.is_dangling(j) || (s - 1.0).abs() < 1e-9, "column {} sums {}", j, s);
            for &(_, v) in &t.cols[j] {
                prop_assert!(v >= 0.0);
            }
        }
        let t2 = build(score.iter().map(|v| v * scale).collect());
        for j in 0..n {
            prop_assert_eq!(t.cols[j].len(), t2.cols[j].len());
            for (a, b) in t.cols[j].iter().zip(&t2.cols[j]) {
                prop_assert_eq!(a.0, b.0);
                prop_assert!((a.1 - b.1).abs() < 1e-12);
            }
        }
    }
}

/// Successive iterates contract geometrically in the per-column mass norm:
/// for column-stochastic transitions this is a theorem (the same claim in
/// the max-entry norm admits counterexamples, which random search finds).
#[test]
fn propagation_contracts_geometrically() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    for case in 0..50 {
        let n = rand::Rng::gen_range(&mut rng, 2..12);
        let lambda = rand::Rng::gen_range(&mut rng, 0.05f64..1.0);
        let (t, p0) = random_walk_system(&mut rng, n, 1);
        let state = EvidenceState {
            columns: p0.clone(),
            initial: p0,
            k: 0,
            lambda,
        };
        let trace = propagate_trace(state, &t, 25);
        let diff = |a: &EvidenceState, b: &EvidenceState| -> f64 {
            a.columns[0]
                .iter()
                .zip(&b.columns[0])
                .map(|(x, y)| (x - y).abs())
                .sum()
        };
        for w in trace.windows(3) {
            let d1 = diff(&w[1], &w[0]);
            let d2 = diff(&w[2], &w[1]);
            assert!(
                d2 <= (1.0 - lambda) * d1 + 1e-12,
                "case {case}: d2={d2} d1={d1} lambda={lambda}"
            );
        }
    }
}

#[test]
fn long_walks_match_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    for _ in 0..100 {
        let n = rand::Rng::gen_range(&mut rng, 2..=20);
        let (t, p0) = random_walk_system(&mut rng, n, 2);
        let state = EvidenceState {
            columns: p0.clone(),
            initial: p0.clone(),
            k: 0,
            lambda: 0.5,
        };
        let out = propagate(state, &t, 200);
        for (col, p) in out.columns.iter().zip(&p0) {
            let exact = fixed_point(&t, p, 0.5).unwrap();
            for (a, b) in col.iter().zip(&exact) {
                assert!((a - b).abs() <= 1e-8);
            }
        }
    }
}

/// With all encoder outputs zero the semantic term vanishes, so the
/// link-only and full transition matrices coincide.
#[test]
fn zero_encoders_collapse_full_to_link_only() {
    use linkwalk_core::graph::{build_transition, SemanticVec, TransitionMode};
    use linkwalk_core::synth::{separable_world, WorldSpec};

    let world = separable_world(&WorldSpec {
        clusters: 3,
        entities_per_cluster: 3,
        train_docs: 4,
        val_docs: 0,
        emb_dim: 6,
        seed: 3,
        ..WorldSpec::default()
    });
    let kb = world.load_kb().unwrap();
    let corpus = world.load_train(&kb).unwrap();
    let pe = linkwalk_core::PositionalEncoding::new(8);
    for doc in &corpus.documents {
        if doc.union_size() == 0 {
            continue;
        }
        let semantic: Vec<SemanticVec> = (0..doc.union_size())
            .map(|e| SemanticVec::new(&vec![0.0; 8], &pe.vector(doc.first_mention[e])))
            .collect();
        let active = vec![true; doc.union_size()];
        let (full, _, _) =
            build_transition(doc, &kb, TransitionMode::Full, &semantic, &active).unwrap();
        let (link_only, _, _) =
            build_transition(doc, &kb, TransitionMode::LinkOnly, &semantic, &active).unwrap();
        for j in 0..doc.union_size() {
            assert_eq!(full.cols[j].len(), link_only.cols[j].len());
            for (a, b) in full.cols[j].iter().zip(&link_only.cols[j]) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-15);
            }
        }
    }
}

/// Encoding is stateless: interleaving or reordering granularity encodings
/// never changes any output.
#[test]
fn encoder_is_stateless_across_orderings() {
    use linkwalk_core::encoder::{encode, ConvEncoder, EmbeddingTable};
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocab: Vec<(String, Vec<f64>)> = ["a", "b", "c", "d"]
        .iter()
        .map(|w| {
            let row: Vec<f64> = (0..5).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            (w.to_string(), row)
        })
        .collect();
    let emb = EmbeddingTable::new(vocab, 5, &mut rng).unwrap();
    let enc = ConvEncoder::seeded(3, 2, 5, &mut rng);
    let to_tokens = |s: &[&str]| s.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    let inputs = [
        to_tokens(&["a", "b", "c"]),
        to_tokens(&["d"]),
        to_tokens(&["c", "c", "a", "b"]),
    ];
    let forward: Vec<Vec<f64>> = inputs.iter().map(|x| encode(&enc, &emb, x)).collect();
    let backward: Vec<Vec<f64>> = inputs.iter().rev().map(|x| encode(&enc, &emb, x)).collect();
    for (a, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(a, b);
    }
}
