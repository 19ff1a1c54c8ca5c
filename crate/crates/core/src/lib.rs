//! Definition-sentence classification: a text-level graph convolutional
//! network over per-sentence word graphs, a toy transformer encoder with an
//! ingestion path for externally exported CLS features, a joint
//! concatenation classifier, and the training/evaluation harness
//! (AdamW, positive-class F1, stratified k-fold cross-validation,
//! loss-ranked error analysis).

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod text;

pub use error::{Error, Result};
pub use harness::{EncoderSource, Model, ModelConfig, ModelKind, TrainConfig};
