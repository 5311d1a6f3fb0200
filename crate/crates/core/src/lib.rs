//! Self-supervised clustering at desk scale: two stochastic views of each
//! sample are softly assigned to learnable prototypes, and a student network
//! is trained so that its assignment of one view matches an EMA teacher's
//! assignment of the other view. The assignment softmax runs independently
//! inside random partitions of the prototype set, with a per-block
//! KL-to-uniform term on the batch-average assignment; this keeps training
//! from collapsing onto a few prototypes without any explicit negative pairs.
//!
//! The crate is self-contained: dense f64 linear algebra, a fixed seedable
//! PRNG, manual backpropagation, the training loop, k-NN and k-means
//! evaluation protocols, and the `carp` command-line tool all live here.

pub mod cli;
pub mod data;
pub mod ema;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod partition;
pub mod trainer;

pub use error::CarpError;
