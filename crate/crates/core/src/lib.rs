//! Token-decoding strategies (greedy, beam search, truncation samplers, and
//! penalty decoding), desk-scale reference language models, self-reinforcement
//! and text-quality metrics, and a corpus evaluation harness.
//!
//! The crate is organized around a few shared value types ([`types`]): token
//! sequences, logit/probability vectors, and per-step [`types::StepTrace`]
//! records. Decoders produce [`types::GenerationRecord`]s; metrics read them;
//! the harness orchestrates corpora, sweeps, and reports.

pub mod decoders;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod penalty;
pub mod types;

pub use decoders::{
    beam_search, generate, penalty_decode, DecodeError, DecodeRng, DecoderConfig, Strategy,
};
pub use metrics::{MetricsError, QualityReport, SelfReinforcementReport};
pub use models::{
    load_model, save_model, sequence_logprob, train_ngram, LanguageModel, ModelError, ModelInfo,
    ModelKind, NGramLM, TableLM, Tokenizer,
};
pub use penalty::{
    apply_penalties, length_penalty, repetition_penalty, PenaltyConfig, PenaltyError, Window,
};
pub use types::{
    argmax_token, log_softmax, softmax, DistError, GenerationRecord, LogitVector, ProbVector,
    StepTrace, Termination, TokenId, TokenSequence,
};
