//! Bilevel sample reweighting for robustness to spurious correlations.
//!
//! The crate learns per-sample training weights so that plain weighted ERM
//! training stops relying on spurious features. The inner problem trains a
//! small model on weighted data; the outer problem scores the trained model
//! with an out-of-distribution risk on a validation split and moves the
//! weights along a one-step truncated hypergradient.
//!
//! Modules:
//! - [`model`], [`loss`]: small models and their derivative primitives.
//! - [`risks`]: ERM, IRMv1, REx, GroupDRO and CVaR risks with gradients.
//! - [`inner`]: weighted ERM training and an exact weighted least-squares solver.
//! - [`outer`]: hypergradients, mask sampling, projections, Adam, and the driver.
//! - [`data`]: seeded synthetic distribution-shift benchmarks and dataset files.
//! - [`oracle`]: exact finite-distribution checks of the linear identifiability theory.
//! - [`harness`]: experiment configuration, baselines, metrics, and sweeps.

pub mod data;
pub mod error;
pub mod harness;
pub mod inner;
pub mod loss;
pub mod model;
pub mod oracle;
pub mod outer;
pub mod risks;
pub mod seed;

pub use error::{Error, Result};
pub use loss::LossFamily;
pub use model::{Activation, Batch, Matrix, ModelKind, ModelSpec, ParamVector};
