//! Passage retrieval for questions asked about images.
//!
//! Sparse retrieval expands the question with object names or captions,
//! runs BM25 for every expanded query and fuses the resulting lists. Dense
//! retrieval encodes the question (and optionally region features) and the
//! passages into one vector space and ranks by inner product. Relevance is
//! answer containment: a passage is relevant if it contains a ground-truth
//! answer.

mod binio;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod ranking;
pub mod sparse;
pub mod synth;
pub mod training;

pub use corpus::{
    contains_answer, expand_query, load_passages, load_queries, tokenize, Collection,
    ExpansionMode, MultiModalQuery, Passage,
};
pub use dense::{
    build_store, DualEncoderParams, EncoderShape, PassageVector, QueryVector, VectorStore,
};
pub use error::{Error, Result};
pub use eval::{evaluate, paired_t_test, EvalResult, TTest};
pub use fusion::{comb_max, comb_sum, rrf, FusionMethod};
pub use ranking::{load_run, save_run, RankedEntry, RankedList};
pub use sparse::{build_index, tune_params, Bm25Params, InvertedIndex};
pub use synth::{synth_gen, SynthData};
pub use training::{
    batch_loss_and_grads, build_training_data, build_validation_collection, candidates_for, train,
    Checkpoint, NegativeSamplingStrategy, TrainConfig, TrainingInstance,
};
