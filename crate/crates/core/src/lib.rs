//! LEAP: per-parameter Gaussian learning-rate perturbation layered over
//! standard schedules and optimizers, plus the experiments used to study it.
//!
//! The crate is organised bottom-up:
//!
//! * [`schedules`], [`perturbation`], [`optimizers`] and [`models`] make up
//!   the training stack; [`data`] loads MNIST IDX files or synthesises blobs.
//! * [`landscapes`] and [`escape`] run first-passage experiments on analytic
//!   losses with catalogued minima.
//! * [`flatness`] measures curvature of trained solutions.
//! * [`harness`] ties everything into configured, reproducible runs.

// `!(x > 0.0)` is how bounds checks here reject NaN; index loops read
// closer to the math in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod escape;
pub mod flatness;
pub mod harness;
pub mod landscapes;
pub mod linalg;
pub mod models;
pub mod optimizers;
pub mod perturbation;
pub mod rng;
pub mod schedules;
pub mod stats;

pub use data::{Dataset, SplitSpec};
pub use error::{LeapError, Result};
pub use escape::{EscapeEstimate, EscapeSettings, EscapeTrialRecord, NoiseModel, Theorem1Fit};
pub use flatness::{FlatnessReport, FlatnessSettings};
pub use landscapes::{CatalogedLandscape, Landscape, LandscapeSpec, MinimaCatalogEntry};
pub use models::{Batch, MlpSpec, ParamVector};
pub use optimizers::{LeapAdamMode, LeapOptimizer, OptimizerConfig, OptimizerKind, OptimizerState};
pub use perturbation::{LeapConfig, LrVector, SIGMA_GRID};
pub use rng::RngStream;
pub use schedules::ScheduleSpec;
