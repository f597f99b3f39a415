//! Subword-aware CBOW word embeddings.
//!
//! A single model can be trained over both modalities ("unified"), or one
//! model per modality for the separate-language-model ablation. Vectors for
//! out-of-vocabulary tokens are composed from hashed character n-grams.

mod io;
mod model;
mod subword;
mod train;
mod vocab;

pub use io::{read_model, write_model, write_text_vectors};
pub use model::{EmbeddingModel, EmbeddingScope, Embeddings};
pub use subword::{char_ngrams, hash_ngram, SubwordConfig};
pub use train::{train_cbow, CbowTrainConfig};
pub use vocab::Vocabulary;
