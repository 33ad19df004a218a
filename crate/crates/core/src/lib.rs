//! Collective entity linking over a knowledge-base graph.
//!
//! The pipeline: a shared convolutional text encoder and a sparse feature
//! set score each mention against its candidate entities locally; a
//! document-local transition matrix built from hyperlink overlap and learned
//! semantic relatedness then propagates linking evidence between candidates
//! of different mentions through recurrent random-walk steps with restart.
//! Training minimizes cross-entropy on the local distributions plus a
//! consistency regularizer that keeps them near fixed points of the walk.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod infer;
pub mod kb;
pub mod local;
pub mod model;
pub mod synth;
pub mod tokenize;
pub mod train;

pub use config::Config;
pub use corpus::{load_corpus, Corpus, Document, Mention};
pub use encoder::{ConvEncoder, EmbeddingTable, PositionalEncoding};
pub use error::{Error, Result};
pub use eval::{micro_f1, EvalReport, Prediction};
pub use graph::{
    build_transition, decide, fixed_point, propagate, EvidenceState, TransitionMatrix,
    TransitionMode,
};
pub use kb::{load_kb, EntityPage, KnowledgeBase};
pub use model::{score_document, EncodingDims, Grads, ModelParams};
pub use train::{grad_check, train, GradCheckReport, TrainOutcome};
