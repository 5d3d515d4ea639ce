//! Penalized local-linear regression that shrinks the non-additive part of
//! a multivariate fit toward the additive model.

pub mod additive;
pub mod analyze;
pub mod anova;
pub mod calibrate;
pub mod config;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod field;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod moments;
pub mod selection;
pub mod simulation;
pub mod solver;

pub use config::{BandwidthSpec, BoundaryPolicy, FitConfig, Penalty, SolverKind};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use field::{AdditiveCoords, ParamField};
pub use grid::Grid;
pub use moments::MomentField;
