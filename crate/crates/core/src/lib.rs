//! Episodic few-shot classification with a graph neural network whose edge
//! relations are either the absolute difference of node embeddings or a
//! task-level attention relation computed over every node in the episode.
//!
//! Modules, bottom up:
//!
//! * [`tensor`]: reverse-mode differentiation tape and gradient checker.
//! * [`episode`]: datasets, N-way K-shot sampling, label masking, layouts.
//! * [`embedding`]: the MLP feature encoder.
//! * [`relation`]: relation measures and their score heads.
//! * [`gnn`]: edge initialisation, node aggregation, forward pass, prediction.
//! * [`trainer`]: loss, Adam, learning-rate schedule, training and evaluation.

pub mod embedding;
pub mod episode;
pub mod error;
pub mod gnn;
pub mod relation;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
