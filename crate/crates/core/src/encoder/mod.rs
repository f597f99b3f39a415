//! The dual-encoder network.
//!
//! Each encoder maps a mean-pooled token vector through an input projection,
//! a residual dense/dropout/add block applied `passes` times, a ReLU and an
//! L2 normalization. Outputs are non-negative unit vectors, so the dot
//! product of a text and a code encoding lies in `[0, 1]`.
//!
//! Gradients are derived by hand; see [`backward`] and the loss functions in
//! [`loss`].

mod io;
pub mod loss;
mod network;
mod pooled;

pub use io::{read_checkpoint, write_checkpoint, Precision, Provenance};
pub use loss::{
    contrastive_loss, cosine_bce_loss, loss_and_grad, mean_linked_similarity, off_diagonal_mean, similarity,
    similarity_matrix, softmax_loss, target_matrix, LossKind,
};
pub use network::{
    backward, encode, encode_batch, encoder_forward, forward_batch, pool, pooled_tokens, DualEncoder, EncoderConfig,
    EncoderParams, Encoding, ForwardCache, Mode,
};
pub use pooled::PooledPairs;
