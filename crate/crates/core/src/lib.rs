//! CNN-LSTM sentence representation models.
//!
//! A convolutional encoder maps a sentence to a fixed-length vector; LSTM
//! decoders reconstruct it, predict the next sentence, or (hierarchically)
//! generate the rest of a paragraph. The crate also carries the training
//! loop, checkpoints and the downstream evaluation protocols.

pub mod decoder;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
pub use model::{Checkpoint, Model, ModelDims, TrainConfig, Variant};
pub use tensor::{Real, Tensor};
pub use text::{SentenceBatch, Vocab};
