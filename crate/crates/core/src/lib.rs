//! Nonlinear low-rank factor models with a link function learned in a
//! scalar RKHS, fitted by projected block coordinate descent.

pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod link;
pub mod model;
pub mod objective;
pub mod solver;

pub use error::{Error, Result};
pub use kernel::{KernelSpec, LinkFunction, MonotoneBounds, ProjectionMode};
pub use link::{AnalyticLink, Link};
pub use model::{FactorMatrix, GroundTruth, ObservationSet, Sample, SyntheticConfig};
