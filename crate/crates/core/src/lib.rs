//! Multiplex heterogeneous graph convolution.
//!
//! Per-relation adjacencies are combined with trainable weights into one
//! matrix `𝔸 = Σ_r β_r A_r`; node features are propagated through `l`
//! activation-free layers `H^(i) = 𝔸 H^(i-1) W^(i)` and the layer outputs
//! are averaged. Because nothing is nonlinear, `𝔸^i` in the expansion counts
//! relation-weighted walks of length `i`, which [`oracle`] verifies by brute
//! force.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod oracle;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use graph::{AmhenGraph, DenseMatrix, EdgeRecord, SparseMatrix};
pub use model::{ForwardTrace, Fusion, Mode, ModelParams};
pub use training::{Ablation, Task, TrainConfig};
