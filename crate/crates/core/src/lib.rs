//! Model-agnostic sequence decoding: beam search, ensemble with bi-level
//! beam search (EBBS), word- and sequence-level ensemble baselines, BLEU,
//! and an ensemble-then-distill pipeline over pluggable scorers.

pub mod beam_search;
pub mod cli;
pub mod config;
pub mod distill;
pub mod ebbs;
pub mod error;
pub mod hypothesis;
pub mod io;
pub mod logmath;
pub mod mbr;
pub mod metrics;
pub mod paths;
pub mod scorer;
pub mod synth;
pub mod vocab;

pub use beam_search::{beam_search, brute_force_decode};
pub use config::{DecodeConfig, DecodeResult, StepStats};
pub use error::{Error, ErrorKind, Result};
pub use hypothesis::{normalized_score, Beam, Hypothesis};
pub use scorer::{Scorer, SharedScorer};
pub use vocab::{TokenId, TokenRef, Vocabulary};
