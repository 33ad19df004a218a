//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use linkwalk_core::graph::TransitionMatrix;
use linkwalk_core::synth::{random_walk_system, separable_world, WorldSpec};
use linkwalk_core::{Corpus, EmbeddingTable, KnowledgeBase, ModelParams};

/// A mid-sized random walk system.
pub fn walk_fixture(n: usize) -> (TransitionMatrix, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    random_walk_system(&mut rng, n, 8)
}

/// A small trained-shape world for end-to-end scoring benchmarks.
pub fn scoring_fixture() -> (KnowledgeBase, Corpus, ModelParams) {
    let spec = WorldSpec {
        train_docs: 8,
        val_docs: 0,
        seed: 23,
        ..WorldSpec::default()
    };
    let world = separable_world(&spec);
    let kb = world.load_kb().expect("kb loads");
    let corpus = world.load_train(&kb).expect("corpus loads");
    let embeddings: EmbeddingTable = world.load_embeddings(23).expect("embeddings load");
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let params = ModelParams::init(embeddings, 16, 3, &mut rng);
    (kb, corpus, params)
}
