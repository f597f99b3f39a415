//! Semantic code search with dual encoders over unified subword embeddings.
//!
//! The pipeline: [`corpus`] turns raw (docstring, code) pairs into token
//! sequences, [`embedding`] trains a CBOW model with character n-grams over
//! both modalities, [`encoder`] maps pooled token vectors into a shared
//! non-negative unit-norm space, [`training`] fits the two encoders with a
//! similarity-target cross-entropy loss, and [`retrieval`] / [`evaluation`]
//! rank code for a query and score the rankings.

pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod retrieval;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
