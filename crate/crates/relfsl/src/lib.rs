//! Few-shot image classification with relational embedding and bi-level
//! routing attention, built on a self-verifying tensor/autodiff core.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] — dense tensors, pure kernels, the autodiff tape, and
//!   finite-difference gradient checking
//! - [`reference`] — independent nested-loop oracles the kernels are
//!   verified against
//! - [`data`] — PNM image ingestion, a deterministic synthetic corpus
//!   generator, disjoint class splits, and N-way-K-shot episode sampling
//! - [`encoder`] — the Conv4 backbone and cross-task interpolation
//! - [`relation`] — self-correlational (SCR) and cross-correlational (CCA)
//!   embedding modules
//! - [`routing`] — generic bi-level routing attention with a dense oracle
//!   and MAC accounting
//! - [`model`] — the assembled classifier pipeline and its parameter store
//! - [`train`] / [`evaluate`] / [`metrics`] — episodic training, evaluation,
//!   and report metrics
//! - [`checkpoint`] / [`config`] — portable persistence formats
//! - [`verify`] — the named gradient-check suite run by `relfsl gradcheck`
//! - [`heatmap`] / [`ablation`] / [`cli`] — the user-facing surface
//!
//! The `examples/` directory carries one runnable example per capability;
//! the thin `relfsl` binary exposes the same functionality as subcommands.

pub mod error;
pub mod scalar;
pub mod tensor;

pub mod reference;

pub mod data;
pub mod encoder;
// WIP pub mod relation;
// WIP pub mod routing;

// WIP pub mod model;

// WIP pub mod evaluate;
// WIP pub mod metrics;
// WIP pub mod train;

// WIP pub mod checkpoint;
// WIP pub mod config;

// WIP pub mod verify;

// WIP pub mod ablation;
// WIP pub mod cli;
// WIP pub mod heatmap;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::tape::{Tape, Var};
pub use tensor::Tensor;
