//! MPenSSAR estimation: ridge-profiled `(μ, β)`, box-constrained `R`,
//! prediction on held-out units and the two baselines.

mod box_ls;
mod projection;
mod ridge;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{solve_sar, LinalgError};
use crate::path::AugmentedPath;
use crate::signature::{sig_matrix, SignatureError};
use crate::spatial::SpatialWeights;

pub use box_ls::{
    gradient_mapping_norm, quadratic_value, solve_box_ls, BoxLsOptions, BoxLsResult, RMode,
    PG_MAX_ITER, PG_TOL,
};
pub use projection::{
    components_below_inertia, predict_projssar, projssar_fit, projssar_fit_components,
    projssar_fit_design, PcaBasis, ProjssarFit,
};
pub use ridge::{residual, RidgeDesign, RidgeSolver};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("ridge system of size {dim} is singular at lambda = {lambda}; use lambda > 0")]
    Singular { dim: usize, lambda: f64 },
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite response at row {row}, column {col}")]
    NonFiniteResponse { row: usize, col: usize },
    #[error("the first design column must be the unit column")]
    MissingUnitColumn,
    #[error("inertia cap must lie in (0, 1), got {0}")]
    InvalidInertiaCap(f64),
    #[error("no signature coefficient has positive variance")]
    NoVariance,
    #[error("prediction infeasible: {0}")]
    PredictionInfeasible(#[source] LinalgError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient_norm: f64,
    /// Residual covariance `ÊᵀÊ / n`, `Q × Q`.
    #[serde(with = "row_major")]
    pub sigma_hat: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpenssarFit {
    pub m: usize,
    /// Channels of the augmented paths the signatures were taken over.
    pub channels: usize,
    pub lambda: f64,
    #[serde(with = "row_major")]
    pub r_hat: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub mu_hat: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub beta_hat: DMatrix<f64>,
    pub train_objective: f64,
    pub diagnostics: FitDiagnostics,
}

impl MpenssarFit {
    pub fn q(&self) -> usize {
        self.r_hat.nrows()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serialises")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Matrices as `{rows, cols, data}` with row-major data.
pub mod row_major {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Doc {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = m.transpose().as_slice().to_vec();
        Doc {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let doc = Doc::deserialize(d)?;
        if doc.rows * doc.cols != doc.data.len() {
            return Err(D::Error::custom(format!(
                "matrix {}x{} needs {} entries, found {}",
                doc.rows,
                doc.cols,
                doc.rows * doc.cols,
                doc.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(doc.rows, doc.cols, &doc.data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub box_ls: BoxLsOptions,
}

/// Outcome of the `R` step.
#[derive(Debug, Clone, PartialEq)]
pub struct RFit {
    pub r: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub pg_norm: f64,
    /// `(1/n)‖(I − P)(Y − WYR)‖²` at `r`.
    pub objective: f64,
}

fn check_response(y: &DMatrix<f64>) -> Result<()> {
    for c in 0..y.ncols() {
        for r in 0..y.nrows() {
            if !y[(r, c)].is_finite() {
                return Err(EstimatorError::NonFiniteResponse { row: r, col: c });
            }
        }
    }
    Ok(())
}

fn check_shapes(n_design: usize, y: &DMatrix<f64>, w: &SpatialWeights) -> Result<()> {
    if y.nrows() != n_design || w.n() != n_design {
        return Err(EstimatorError::Dimension(format!(
            "design has {n_design} units, Y has {} rows, W has {} units",
            y.nrows(),
            w.n()
        )));
    }
    if y.ncols() == 0 {
        return Err(EstimatorError::Dimension("Y has no columns".into()));
    }
    check_response(y)
}

fn strip_unit(s_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s_tilde.ncols() == 0 || s_tilde.column(0).iter().any(|v| *v != 1.0) {
        return Err(EstimatorError::MissingUnitColumn);
    }
    Ok(s_tilde.columns(1, s_tilde.ncols() - 1).into_owned())
}

/// `(S̃ᵀS̃ + nΛ)⁻¹ S̃ᵀ (Y − WYR)` split into `(μ, β)`.
pub fn profile_coefficients(
    s_tilde: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    r: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sig = strip_unit(s_tilde)?;
    check_shapes(sig.nrows(), y, w)?;
    let design = RidgeDesign::new(sig);
    let solver = design.solver(lambda)?;
    let target = y - w.apply(y) * r;
    Ok(solver.coefficients(&target))
}

/// Minimises the profiled objective in `R` over the box.
pub fn fit_r(
    s_tilde: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    lambda: f64,
) -> Result<RFit> {
    fit_r_with_options(s_tilde, y, w, lambda, &BoxLsOptions::default())
}

pub fn fit_r_with_options(
    s_tilde: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    lambda: f64,
    opts: &BoxLsOptions,
) -> Result<RFit> {
    let sig = strip_unit(s_tilde)?;
    check_shapes(sig.nrows(), y, w)?;
    let design = RidgeDesign::new(sig);
    let solver = design.solver(lambda)?;
    Ok(fit_r_profiled(&solver, y, &w.apply(y), opts))
}

/// `R` step on an already factorised ridge level.
pub fn fit_r_profiled(
    solver: &RidgeSolver<'_>,
    y: &DMatrix<f64>,
    wy: &DMatrix<f64>,
    opts: &BoxLsOptions,
) -> RFit {
    let n = y.nrows();
    let a = solver.residualize(y);
    let b = solver.residualize(wy);
    let g = b.tr_mul(&b);
    let c = b.tr_mul(&a);
    let res = solve_box_ls(&g, &c, n, opts);
    let objective = (a.norm_squared() + quadratic_value(&g, &c, &res.r)) / n as f64;
    RFit {
        r: res.r,
        iterations: res.iterations,
        converged: res.converged,
        pg_norm: res.pg_norm,
        objective: objective.max(0.0),
    }
}

/// Fits the model at order `m` and ridge level `lambda`.
pub fn fit(
    paths: &[AugmentedPath],
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    lambda: f64,
) -> Result<MpenssarFit> {
    fit_with_options(paths, y, w, m, lambda, &FitOptions::default())
}

pub fn fit_with_options(
    paths: &[AugmentedPath],
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    lambda: f64,
    opts: &FitOptions,
) -> Result<MpenssarFit> {
    let channels = paths_channels(paths)?;
    check_shapes(paths.len(), y, w)?;
    let design = RidgeDesign::new(sig_matrix(paths, m)?);
    fit_design(&design, y, w, m, channels, lambda, opts)
}

fn paths_channels(paths: &[AugmentedPath]) -> Result<usize> {
    let first = paths
        .first()
        .ok_or_else(|| EstimatorError::Dimension("no paths".into()))?;
    Ok(first.channels())
}

/// Fit on a precomputed signature design whose columns are the order-`m`
/// shifted signature.
pub fn fit_design(
    design: &RidgeDesign,
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    channels: usize,
    lambda: f64,
    opts: &FitOptions,
) -> Result<MpenssarFit> {
    check_shapes(design.n(), y, w)?;
    let solver = design.solver(lambda)?;
    let wy = w.apply(y);
    Ok(fit_solver(&solver, y, &wy, m, channels, opts))
}

/// Fit on a factorised ridge level with `WY` supplied.
pub fn fit_solver(
    solver: &RidgeSolver<'_>,
    y: &DMatrix<f64>,
    wy: &DMatrix<f64>,
    m: usize,
    channels: usize,
    opts: &FitOptions,
) -> MpenssarFit {
    let rfit = fit_r_profiled(solver, y, wy, &opts.box_ls);
    let target = y - wy * &rfit.r;
    let (mu, beta) = solver.coefficients(&target);
    let resid = residual(&target, solver.design().sig(), &mu, &beta);
    let n = y.nrows() as f64;
    MpenssarFit {
        m,
        channels,
        lambda: solver.lambda(),
        r_hat: rfit.r,
        mu_hat: mu,
        beta_hat: beta,
        train_objective: resid.norm_squared() / n,
        diagnostics: FitDiagnostics {
            iterations: rfit.iterations,
            converged: rfit.converged,
            projected_gradient_norm: rfit.pg_norm,
            sigma_hat: resid.tr_mul(&resid) / n,
        },
    }
}

/// Predicts the test block. `w_full` covers the training units followed by
/// the test units; training responses stay at their observed values.
pub fn predict(
    fit: &MpenssarFit,
    paths_test: &[AugmentedPath],
    w_full: &SpatialWeights,
    y_train: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let sig = sig_matrix(paths_test, fit.m)?;
    predict_from_design(fit, &sig, w_full, y_train)
}

pub fn predict_from_design(
    fit: &MpenssarFit,
    sig_test: &DMatrix<f64>,
    w_full: &SpatialWeights,
    y_train: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n_k, n_t) = (y_train.nrows(), sig_test.nrows());
    if w_full.n() != n_k + n_t {
        return Err(EstimatorError::Dimension(format!(
            "W covers {} units, expected {n_k} known + {n_t} test",
            w_full.n()
        )));
    }
    if sig_test.ncols() != fit.beta_hat.nrows() || y_train.ncols() != fit.q() {
        return Err(EstimatorError::Dimension(format!(
            "test design {}x{} and Y {}x{} do not fit a model with s = {}, Q = {}",
            sig_test.nrows(),
            sig_test.ncols(),
            y_train.nrows(),
            y_train.ncols(),
            fit.beta_hat.nrows(),
            fit.q()
        )));
    }
    check_response(y_train)?;
    let known: Vec<usize> = (0..n_k).collect();
    let test: Vec<usize> = (n_k..n_k + n_t).collect();
    let w_tk = w_full.block(&test, &known);
    let w_tt = w_full.block(&test, &test);
    let mut rhs = &w_tk * y_train * &fit.r_hat + sig_test * &fit.beta_hat;
    for (j, mut col) in rhs.column_iter_mut().enumerate() {
        col.add_scalar_mut(fit.mu_hat[(0, j)]);
    }
    solve_sar(&w_tt, &fit.r_hat, &rhs).map_err(EstimatorError::PredictionInfeasible)
}

/// The single-response model.
pub fn penssar_fit(
    paths: &[AugmentedPath],
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    lambda: f64,
) -> Result<MpenssarFit> {
    if y.ncols() != 1 {
        return Err(EstimatorError::Dimension(format!(
            "PenSSAR takes one response column, got {}",
            y.ncols()
        )));
    }
    fit(paths, y, w, m, lambda)
}
