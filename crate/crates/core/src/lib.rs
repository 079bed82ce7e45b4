//! Slowdown-attack harness for differentiable TTS surrogates.
//!
//! The crate provides the full pipeline: a small reverse-mode autodiff
//! tape ([`tensor`]), seeded surrogate victims exposing stop-token and
//! duration-predictor length control ([`victims`]), speaker- and
//! text-space attacks against them ([`attack`]), text perturbation
//! machinery ([`perturb`], [`corpus`]), and the slowdown metrics and
//! reporting used to compare methods ([`metrics`], [`report`]).

pub mod attack;
pub mod corpus;
pub mod gradcheck;
pub mod metrics;
pub mod perturb;
pub mod report;
pub mod seed;
pub mod tensor;
pub mod victims;

pub use attack::{AttackConfig, AttackError, AttackOutcome, Norm, Perturbation};
pub use corpus::Utterance;
pub use perturb::{CandidateText, HomoglyphTable, Strategy};
pub use tensor::{Graph, NodeId, Tensor, TensorError};
pub use victims::{
    ArDims, ArVictim, EmbeddingTable, Evaluation, NarDims, NarVictim, SpeakerEmbedding, TokenId,
    Victim, VictimError, VictimKind, VictimOutput,
};
