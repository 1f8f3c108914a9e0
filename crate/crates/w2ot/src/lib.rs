//! Learning the optimal transport map between two sampled distributions
//! under squared-Euclidean cost, via a minimax problem over a pair of
//! input-convex neural networks. The convex potential g is trained so that
//! its input gradient pushes the source distribution onto the target; the
//! second network f plays the adversary in the dual objective.
//!
//! The crate is organized as:
//! - [`tensor`], [`activation`], [`tape`]: a small dense-tensor core with
//!   tape-based reverse-mode differentiation over batch-level primitives;
//! - [`icnn`]: input-convex network configuration, evaluation and the
//!   differentiable input-gradient graph;
//! - [`optim`]: Adam with a step-decay schedule;
//! - [`data`]: benchmark distributions and deterministic labeled RNG
//!   streams;
//! - [`train`]: the minimax objective and training loop;
//! - [`eval`]: independent oracles, stability diagnostics and grid exports;
//! - [`checkpoint`], [`config`]: plain-text persistence and TOML run
//!   configuration.

pub mod activation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod icnn;
pub mod optim;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
