//! Temporal Aggregation Network: spatial bottleneck stacks interleaved
//! with multi-dilation temporal aggregation blocks, built on a small
//! tensor/autograd core, with dataset generation, training, evaluation
//! and architecture analysis at desk scale.

pub mod analysis;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Result, TanError};
pub use graph::Graph;
pub use model::{ArchConfig, Model, Variant};
pub use tensor::{Scalar, Tensor};
