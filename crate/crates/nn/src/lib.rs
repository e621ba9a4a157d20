//! Neural building blocks recorded on a [`ddt_tensor::Tape`].
//!
//! Every block owns only [`ParamId`](ddt_tensor::ParamId)s; the tensors live in
//! a shared [`ParamStore`](ddt_tensor::ParamStore) so one optimizer and one
//! checkpoint cover the whole model.

mod attention;
mod embedding;
mod error;
mod gru;
pub mod init;
mod linear;
mod norm;

pub use attention::{NormPlacement, TransformerBlock, TransformerConfig};
pub use embedding::{step_embedding, ModeToken, StepEmbedding};
pub use error::NnError;
pub use gru::GatedRecurrentCell;
pub use linear::LinearLayer;
pub use norm::LayerNorm;

pub type Result<T, E = NnError> = std::result::Result<T, E>;
