#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Parameter estimation for one-dimensional autonomous SDEs by Koopman
//! operator matching.
//!
//! Given snapshot pairs `(x_j, y_j)` separated by a time step `t`, the
//! data-driven EDMD matrix `A = K̂ M⁻¹` is compared against the projected
//! Koopman matrix `exp(t L(θ) M⁻¹)` built from the SDE's infinitesimal
//! generator, and `θ` is chosen to minimise their distance.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] and [`sim`]: SDE families and seeded path simulators.
//! * [`basis`]: Gaussian RBF, Chebyshev and Legendre dictionaries.
//! * [`koopman`], [`linalg`], [`spectral`]: mass/cross/EDMD matrices,
//!   generator templates, the matrix exponential and eigen-truncation.
//! * [`objective`] and [`estimator`]: the four objectives and the BFGS driver.
//! * [`harness`]: batch statistics, convergence studies, truncation grids and
//!   variant comparisons.
//! * [`io`]: CSV/JSON file formats.

pub mod basis;
pub mod data;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod io;
pub mod koopman;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod sim;
pub mod spectral;

pub use basis::{BasisFamily, BasisSet, BasisSpec, Derivative};
pub use data::SnapshotData;
pub use error::{Error, Result};
pub use estimator::{
    classify_failure, estimate, fd_gradient, EstimateResult, FailureRule, LineSearch,
    OptimizerConfig,
};
pub use koopman::{GeneratorTemplate, KoopmanMatrices};
pub use model::{GeneratorCoefficients, Jet, SdeModel};
pub use objective::{EdmdProblem, Objective, ObjectiveKind, ObjectiveSpec};
pub use sim::{InitialCondition, Scheme, SimConfig, SimulatedPaths};
pub use spectral::{eigen_truncate, EigenTruncation};

pub use nalgebra::DMatrix;
