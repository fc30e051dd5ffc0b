//! Machine unlearning for multi-load forecasters, with sample reweighting
//! driven by statistical criteria or by the cost of the downstream dispatch
//! task.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`data`]: datasets, synthetic generation, normalization, index splits.
//! - [`grid`]: power-network cases and DC power-flow matrices.
//! - [`forecaster`]: linear and extractor-head forecast models, exact fits,
//!   criteria, and loss derivatives.
//! - [`qp`]: dense strictly convex QP solver with active-set output and
//!   closed-form solution Jacobians w.r.t. affine constraint offsets.
//! - [`dispatch`]: the dispatch/redispatch stage pair, generator cost, and
//!   its analytic gradient through both QP layers.
//! - [`unlearn`]: Newton unlearning, influence scores, reweighting, and the
//!   retrain oracle.
//!
//! Per-sample loops run in parallel when the default `parallel` feature is
//! enabled; reductions keep a fixed order so results are reproducible
//! bit-for-bit either way.

pub mod data;
pub mod dispatch;
pub mod error;
pub mod forecaster;
pub mod grid;
pub mod par;
pub mod qp;
pub mod unlearn;

pub use error::{Error, ErrorCategory, Result};
