//! Sequential next-item recommendation with partitioned output softmax
//! layers (context partition, pointer network, reranker partitions),
//! multi-hidden-state expansion, efficient mixture of softmax and dedup
//! post-processing, built on a small reverse-mode differentiation core.

pub mod error;
pub mod corpus;
pub mod numcore;
pub mod encoders;
pub mod heads;
pub mod model;
pub mod training;
pub mod eval;
pub mod synthetic;
pub mod experiment;

pub use error::{Error, Result};
