//! Four-step chain-of-thought short-text classification.
//!
//! The crate covers the whole first stage of the pipeline: loading and
//! splitting corpora ([`corpus`]), calling completion backends through a
//! content-addressed cache ([`backend`]), running the identify → retrieve →
//! rewrite → classify chain and the two-step domain chain ([`chains`]),
//! classifying model output ([`classify`]), producing rationale datasets for
//! multi-task distillation ([`rationales`]) and scoring runs ([`evaluate`]).

pub mod backend;
pub mod chains;
pub mod classify;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod jsonl;
pub mod rationales;
pub mod templates;

pub use error::{Error, Result};
