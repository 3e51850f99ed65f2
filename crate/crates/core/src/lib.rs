//! Hierarchical sequential sentence classification.
//!
//! Token embeddings feed a Bi-LSTM sentence encoder with multi-head
//! attention pooling; a second Bi-LSTM enriches sentence vectors with
//! document context; a linear-chain CRF decodes the label sequence.
//! Parameter groups can be transferred between tasks or shared across
//! tasks and text types, and class relatedness across annotation schemes
//! is measured from cross-task predictions.

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod relatedness;
pub mod scalar;
pub mod tensor;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type EmbeddingProvider32 = embeddings::EmbeddingProvider<f32>;
pub type EmbeddingProvider64 = embeddings::EmbeddingProvider<f64>;
