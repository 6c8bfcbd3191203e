//! Hierarchical variational autoencoder for exchangeable sets of varying
//! cardinality, built on a small reverse-mode tape.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, the differentiation [`tensor::Tape`] and Adam.
//! * [`attention`]: multihead / slot attention, MAB and ISAB blocks.
//! * [`model`]: the initial-set prior, ISAB encoder, attentive bottleneck
//!   generator and the ELBO.
//! * [`metrics`]: Chamfer, optimal matching and population metrics.
//! * [`data`]: synthetic corpora, the JSON-lines format and batching.

pub mod attention;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;

pub use data::{Dataset, SetBatch};
pub use error::{Error, Result};
pub use metrics::PointSet;
pub use model::{CardinalityDist, ModelConfig, SetVae};
pub use rng::SetRng;
pub use tensor::{Tape, Tensor, Var};
