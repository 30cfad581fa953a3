//! Protein-language alignment and conversation pipeline.
//!
//! Stage 1 pretrains a query-token transformer ([`plp::PlpFormer`]) on
//! sequence/description pairs. Stage 2 gates its selected embedding with
//! secondary-structure features and aligns it with tertiary embeddings
//! ([`align`]). Stage 3 projects both into soft prompts for a small decoder
//! ([`generation`]). [`eval`] holds the captioning metrics and retrieval
//! protocol, [`pipeline`] the staged training driven by [`config::RunConfig`].

pub mod align;
mod attention;
pub mod config;
pub mod corpus;
pub mod encoders;
mod error;
pub mod eval;
pub mod generation;
pub mod pipeline;
pub mod plp;
pub mod rng;

pub use error::{Error, ParseError, Result};
