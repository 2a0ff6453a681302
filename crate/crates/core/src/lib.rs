//! Multivariate penalized signature-based spatial autoregression.
//!
//! Functional covariates enter through truncated path signatures, responses
//! interact across units through a spatial weight matrix `W` and across
//! response dimensions through a `Q × Q` matrix `R`.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimator;
pub mod io;
pub mod linalg;
pub mod path;
pub mod protocol;
pub mod selection;
pub mod signature;
pub mod simulation;
pub mod spatial;

use thiserror::Error;

pub use estimator::{fit, predict, EstimatorError, MpenssarFit};
pub use path::{augment, AugmentedPath, Path, PathError};
pub use signature::{sig_dim, sig_matrix, signature, SigVector, SignatureError};
pub use spatial::{SpatialError, SpatialWeights};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Selection(#[from] selection::SelectionError),
    #[error(transparent)]
    Simulation(#[from] simulation::SimulationError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error(transparent)]
    Io(#[from] io::IoError),
}
