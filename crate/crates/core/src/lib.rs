//! Fusion segment transformer: full-track AI-generated music detection from
//! sequences of segment embeddings.
//!
//! A track arrives as `N` segment embeddings (one per four-bar segment). The
//! model runs two parallel encoders, one over the embeddings themselves and
//! one over their Gaussian self-similarity matrix, exchanges information
//! between them with bi-directional cross-attention, blends the two with a
//! learned sigmoid gate, pools, and emits a single logit (1 = AI-generated).

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod segmentation;
pub mod ssm;
pub mod synthgen;
pub mod train;

pub use error::{FstError, Result};
pub use model::{FstConfig, FstModel, FusionMode, GateTrace};
pub use numerics::{Real, Tensor};
pub use ssm::{SegmentEmbeddingSequence, SelfSimilarityMatrix};
