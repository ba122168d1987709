//! Unsupervised pooling of variable-length frame representations into
//! fixed-size embeddings.
//!
//! Frames carry both a real-valued context vector and a tuple of codebook
//! indices from a grouped vector quantizer. The quantized indices drive the
//! pooling: frames judged equal can be squashed into partitions before
//! averaging ([`vq::squash_partition`], [`vq::allsquash_partition`]), or
//! weighted by how often their indices occur ([`vq::weights_sif`],
//! [`vq::weights_gp`], [`vq::weights_lp`], [`vq::weights_bp`]).
//!
//! Pooled embeddings are evaluated without any trained head by nearest
//! neighbor classification against the training split ([`knn`]).

pub mod analysis;
pub mod cli;
pub mod dataset;
mod error;
pub mod knn;
pub mod linalg;
pub mod pipeline;
pub mod pooling;
pub mod transform;
pub mod vq;

pub use error::{Error, Result};
