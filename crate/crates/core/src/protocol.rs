//! Train/validation/test pipelines for the three signature methods.
//!
//! Weight matrices are rebuilt on the units each step may see: training
//! units for fitting, training then validation units for validation scoring,
//! training then test units for test prediction.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    fit_solver, predict_from_design, predict_projssar, projssar_fit_components, EstimatorError,
    FitOptions, MpenssarFit, PcaBasis, ProjssarFit, RidgeDesign,
};
use crate::path::{augment, AugmentedPath, Path};
use crate::selection::{
    loss_table_from_sig, select_from_table, slope_heuristic_from_table, default_kpen_grid,
    CriterionRow, SelectionError, DEFAULT_KAPPA,
};
use crate::signature::{max_order_within, sig_dim, sig_matrix, SignatureError, DEFAULT_DIM_CAP};
use crate::spatial::{SpatialError, SpatialWeights, SplitPlan, WeightSpec};

pub const DEFAULT_LAMBDA_GRID: [f64; 9] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2];
pub const DEFAULT_INERTIA_CAP: f64 = 0.95;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("every candidate failed on the validation set; last error: {0}")]
    NoCandidate(String),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mpenssar,
    Penssar,
    Projssar,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mpenssar" => Ok(Self::Mpenssar),
            "penssar" => Ok(Self::Penssar),
            "projssar" => Ok(Self::Projssar),
            _ => Err(format!("unknown method `{s}` (expected mpenssar, penssar or projssar)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KpenChoice {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub lambda_grid: Vec<f64>,
    /// Highest order tried; `None` uses the dimension cap.
    pub m_max: Option<usize>,
    pub kappa: f64,
    pub kpen: KpenChoice,
    pub inertia_cap: f64,
    pub weights: WeightSpec,
    pub fixed_m: Option<usize>,
    pub fixed_lambda: Option<f64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            m_max: None,
            kappa: DEFAULT_KAPPA,
            kpen: KpenChoice::Auto,
            inertia_cap: DEFAULT_INERTIA_CAP,
            weights: WeightSpec::default(),
            fixed_m: None,
            fixed_lambda: None,
        }
    }
}

impl ProtocolConfig {
    fn lambdas(&self) -> Vec<f64> {
        match self.fixed_lambda {
            Some(l) => vec![l],
            None => self.lambda_grid.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.fixed_lambda.is_none() && self.lambda_grid.is_empty() {
            return Err(ProtocolError::Config("lambda grid is empty".into()));
        }
        if self.lambdas().iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(ProtocolError::Config("lambda values must be finite and >= 0".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return Err(ProtocolError::Config(format!("kappa must lie in (0, 1/2), got {}", self.kappa)));
        }
        if let KpenChoice::Fixed(k) = self.kpen {
            if !(k > 0.0 && k.is_finite()) {
                return Err(ProtocolError::Config(format!("K_pen must be positive, got {k}")));
            }
        }
        if !(self.inertia_cap > 0.0 && self.inertia_cap < 1.0) {
            return Err(ProtocolError::Config(format!(
                "inertia cap must lie in (0, 1), got {}",
                self.inertia_cap
            )));
        }
        if self.fixed_m == Some(0) || self.m_max == Some(0) {
            return Err(ProtocolError::Config("orders start at 1".into()));
        }
        Ok(())
    }
}

/// Root mean squared errors per column and pooled over all entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub per_column: Vec<f64>,
    pub pooled: f64,
}

pub fn rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> RmseReport {
    assert_eq!(pred.shape(), truth.shape(), "prediction shape");
    let diff = pred - truth;
    let n = diff.nrows() as f64;
    RmseReport {
        per_column: diff.column_iter().map(|c| (c.norm_squared() / n).sqrt()).collect(),
        pooled: (diff.norm_squared() / diff.len() as f64).sqrt(),
    }
}

fn pooled_rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    ((pred - truth).norm_squared() / pred.len() as f64).sqrt()
}

/// Augmented paths and the signature matrix at the highest order, shared
/// across methods and splits.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub paths: Vec<AugmentedPath>,
    pub channels: usize,
    pub m_max: usize,
    pub sig_max: DMatrix<f64>,
    pub coords: Vec<[f64; 2]>,
    pub y: DMatrix<f64>,
}

impl Prepared {
    pub fn new(paths: &[Path], coords: &[[f64; 2]], y: &DMatrix<f64>, m_max: Option<usize>) -> Result<Self> {
        if paths.len() != coords.len() || paths.len() != y.nrows() {
            return Err(ProtocolError::Config(format!(
                "{} paths, {} coordinates and {} response rows must agree",
                paths.len(),
                coords.len(),
                y.nrows()
            )));
        }
        let aug: Vec<AugmentedPath> = paths.iter().map(augment).collect();
        let channels = aug.first().map_or(0, |p| p.channels());
        let cap_order = max_order_within(channels, DEFAULT_DIM_CAP);
        let m_max = m_max.unwrap_or(cap_order);
        if m_max == 0 || m_max > cap_order {
            return Err(ProtocolError::Config(format!(
                "m_max = {m_max} outside 1..={cap_order} for {channels} augmented channels"
            )));
        }
        let sig_max = sig_matrix(&aug, m_max)?;
        Ok(Self {
            paths: aug,
            channels,
            m_max,
            sig_max,
            coords: coords.to_vec(),
            y: y.clone(),
        })
    }

    pub fn sig_rows(&self, units: &[usize], m: usize) -> Result<DMatrix<f64>> {
        let s = sig_dim(self.channels, m)?;
        Ok(self.sig_max.select_rows(units).columns(0, s).into_owned())
    }
}

/// Per-split views of a prepared dataset.
#[derive(Debug, Clone)]
pub struct SplitData<'a> {
    pub prepared: &'a Prepared,
    pub split: SplitPlan,
    pub w_train: SpatialWeights,
    pub w_val: SpatialWeights,
    pub w_test: SpatialWeights,
    pub sig_train: DMatrix<f64>,
    pub sig_val: DMatrix<f64>,
    pub sig_test: DMatrix<f64>,
    pub y_train: DMatrix<f64>,
    pub y_val: DMatrix<f64>,
    pub y_test: DMatrix<f64>,
}

impl<'a> SplitData<'a> {
    pub fn new(prepared: &'a Prepared, split: &SplitPlan, weights: &WeightSpec) -> Result<Self> {
        if !split.is_partition(prepared.y.nrows()) {
            return Err(ProtocolError::Config("split is not a partition of the units".into()));
        }
        let join = |a: &[usize], b: &[usize]| [a, b].concat();
        let coords = &prepared.coords;
        let m = prepared.m_max;
        Ok(Self {
            prepared,
            w_train: weights.build_subset(coords, &split.train)?,
            w_val: weights.build_subset(coords, &join(&split.train, &split.validation))?,
            w_test: weights.build_subset(coords, &join(&split.train, &split.test))?,
            sig_train: prepared.sig_rows(&split.train, m)?,
            sig_val: prepared.sig_rows(&split.validation, m)?,
            sig_test: prepared.sig_rows(&split.test, m)?,
            y_train: prepared.y.select_rows(&split.train),
            y_val: prepared.y.select_rows(&split.validation),
            y_test: prepared.y.select_rows(&split.test),
            split: split.clone(),
        })
    }

    fn prefix(sig: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
        sig.columns(0, s).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub m: usize,
    pub k_pen: Option<f64>,
    pub val_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct MpenssarOutcome {
    pub fit: MpenssarFit,
    pub k_pen: Option<f64>,
    pub criterion: Vec<CriterionRow>,
    pub scores: Vec<LambdaScore>,
    pub val_rmse: f64,
    pub pred_test: DMatrix<f64>,
    pub test_rmse: RmseReport,
}

struct Candidate {
    fit: MpenssarFit,
    k_pen: Option<f64>,
    criterion: Vec<CriterionRow>,
    val_rmse: f64,
}

/// MPenSSAR: `m̂` minimises `L̂ + pen` at each `λ`, then `λ` is chosen by
/// validation RMSE.
pub fn run_mpenssar(data: &SplitData<'_>, cfg: &ProtocolConfig) -> Result<MpenssarOutcome> {
    cfg.validate()?;
    let prep = data.prepared;
    let n = data.y_train.nrows();
    let channels = prep.channels;
    let m_max = prep.m_max;
    let lambdas = cfg.lambdas();
    let results: Vec<Result<Candidate>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let (m, k_pen, criterion) = match cfg.fixed_m {
                Some(m) => (m, None, Vec::new()),
                None => {
                    let l_hat = loss_table_from_sig(&data.sig_train, channels, &data.y_train, &data.w_train, lambda, m_max)?;
                    let k_pen = match cfg.kpen {
                        KpenChoice::Fixed(k) => k,
                        KpenChoice::Auto => {
                            slope_heuristic_from_table(&l_hat, n, channels, cfg.kappa, &default_kpen_grid(&l_hat))?.k_pen
                        }
                    };
                    let sel = select_from_table(&l_hat, n, channels, k_pen, cfg.kappa);
                    (sel.m_hat, Some(k_pen), sel.table)
                }
            };
            if m > m_max {
                return Err(ProtocolError::Config(format!("m = {m} exceeds m_max = {m_max}")));
            }
            let s = sig_dim(channels, m)?;
            let design = RidgeDesign::new(SplitData::prefix(&data.sig_train, s));
            let solver = design.solver(lambda)?;
            let wy = data.w_train.apply(&data.y_train);
            let fit = fit_solver(&solver, &data.y_train, &wy, m, channels, &FitOptions::default());
            let pred = predict_from_design(&fit, &SplitData::prefix(&data.sig_val, s), &data.w_val, &data.y_train)?;
            Ok(Candidate {
                val_rmse: pooled_rmse(&pred, &data.y_val),
                fit,
                k_pen,
                criterion,
            })
        })
        .collect();
    let mut scores = Vec::new();
    let mut best: Option<Candidate> = None;
    let mut last_err = String::new();
    for (r, &lambda) in results.into_iter().zip(&lambdas) {
        match r {
            Ok(c) => {
                scores.push(LambdaScore {
                    lambda,
                    m: c.fit.m,
                    k_pen: c.k_pen,
                    val_rmse: c.val_rmse,
                });
                if best.as_ref().is_none_or(|b| c.val_rmse < b.val_rmse) {
                    best = Some(c);
                }
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    let best = best.ok_or(ProtocolError::NoCandidate(last_err))?;
    let s = best.fit.beta_hat.nrows();
    let pred_test = predict_from_design(&best.fit, &SplitData::prefix(&data.sig_test, s), &data.w_test, &data.y_train)?;
    Ok(MpenssarOutcome {
        test_rmse: rmse(&pred_test, &data.y_test),
        pred_test,
        val_rmse: best.val_rmse,
        fit: best.fit,
        k_pen: best.k_pen,
        criterion: best.criterion,
        scores,
    })
}

#[derive(Debug, Clone)]
pub struct PerResponseOutcome {
    pub fits: Vec<MpenssarFit>,
    /// Component counts for ProjSSAR, with the cap-implied maximum.
    pub components: Vec<(usize, usize)>,
    pub val_rmse: Vec<f64>,
    pub pred_test: DMatrix<f64>,
    pub test_rmse: RmseReport,
}

impl PerResponseOutcome {
    /// Diagonal of the spatial matrix assembled from the per-response fits.
    pub fn r_diagonal(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.r_hat[(0, 0)]).collect()
    }
}

fn orders(cfg: &ProtocolConfig, m_max: usize) -> Vec<usize> {
    match cfg.fixed_m {
        Some(m) => vec![m],
        None => (1..=m_max).collect(),
    }
}

/// Validation RMSE and the fit it scored.
type Scored = (f64, MpenssarFit);

/// PenSSAR on each response column; `(m, λ)` by validation RMSE.
pub fn run_penssar(data: &SplitData<'_>, cfg: &ProtocolConfig) -> Result<PerResponseOutcome> {
    cfg.validate()?;
    let prep = data.prepared;
    let q = data.y_train.ncols();
    let channels = prep.channels;
    let lambdas = cfg.lambdas();
    let ys: Vec<DMatrix<f64>> = (0..q).map(|j| data.y_train.columns(j, 1).into_owned()).collect();
    let wys: Vec<DMatrix<f64>> = ys.iter().map(|y| data.w_train.apply(y)).collect();
    // (m, λ) cells evaluated for every response at once
    let cells: Vec<Result<Vec<Option<Scored>>>> = orders(cfg, prep.m_max)
        .into_par_iter()
        .map(|m| {
            if m > prep.m_max {
                return Err(ProtocolError::Config(format!("m = {m} exceeds m_max = {}", prep.m_max)));
            }
            let s = sig_dim(channels, m)?;
            let design = RidgeDesign::new(SplitData::prefix(&data.sig_train, s));
            let sig_val = SplitData::prefix(&data.sig_val, s);
            let mut best: Vec<Option<(f64, MpenssarFit)>> = vec![None; q];
            for &lambda in &lambdas {
                let Ok(solver) = design.solver(lambda) else { continue };
                for j in 0..q {
                    let fit = fit_solver(&solver, &ys[j], &wys[j], m, channels, &FitOptions::default());
                    let Ok(pred) = predict_from_design(&fit, &sig_val, &data.w_val, &ys[j]) else { continue };
                    let score = pooled_rmse(&pred, &data.y_val.columns(j, 1).into_owned());
                    if best[j].as_ref().is_none_or(|(b, _)| score < *b) {
                        best[j] = Some((score, fit));
                    }
                }
            }
            Ok(best)
        })
        .collect();
    let mut best: Vec<Option<(f64, MpenssarFit)>> = vec![None; q];
    for cell in cells {
        for (j, cand) in cell?.into_iter().enumerate() {
            if let Some((score, fit)) = cand {
                if best[j].as_ref().is_none_or(|(b, _)| score < *b) {
                    best[j] = Some((score, fit));
                }
            }
        }
    }
    let mut fits = Vec::with_capacity(q);
    let mut val_rmse = Vec::with_capacity(q);
    let mut pred_test = DMatrix::zeros(data.y_test.nrows(), q);
    for (j, b) in best.into_iter().enumerate() {
        let (score, fit) = b.ok_or_else(|| ProtocolError::NoCandidate(format!("response {}", j + 1)))?;
        let s = fit.beta_hat.nrows();
        let pred = predict_from_design(&fit, &SplitData::prefix(&data.sig_test, s), &data.w_test, &ys[j])?;
        pred_test.set_column(j, &pred.column(0));
        fits.push(fit);
        val_rmse.push(score);
    }
    Ok(PerResponseOutcome {
        test_rmse: rmse(&pred_test, &data.y_test),
        pred_test,
        fits,
        components: Vec::new(),
        val_rmse,
    })
}

/// ProjSSAR on each response column; `m` and the component count (up to the
/// inertia cap) by validation RMSE.
pub fn run_projssar(data: &SplitData<'_>, cfg: &ProtocolConfig) -> Result<(PerResponseOutcome, Vec<ProjssarFit>)> {
    cfg.validate()?;
    let prep = data.prepared;
    let q = data.y_train.ncols();
    let channels = prep.channels;
    let ys: Vec<DMatrix<f64>> = (0..q).map(|j| data.y_train.columns(j, 1).into_owned()).collect();
    // (validation RMSE, m, k, cap-implied maximum)
    type Best = Option<(f64, usize, usize, usize)>;
    let cells: Vec<Result<Vec<Best>>> = orders(cfg, prep.m_max)
        .into_par_iter()
        .map(|m| {
            if m > prep.m_max {
                return Err(ProtocolError::Config(format!("m = {m} exceeds m_max = {}", prep.m_max)));
            }
            let s = sig_dim(channels, m)?;
            let sig_train = SplitData::prefix(&data.sig_train, s);
            let mut best: Vec<Best> = vec![None; q];
            let Ok(basis) = PcaBasis::new(&sig_train) else { return Ok(best) };
            let k_max = basis.max_components(cfg.inertia_cap);
            let z_train = basis.scores(&sig_train, k_max);
            let z_val = basis.scores(&SplitData::prefix(&data.sig_val, s), k_max);
            for k in 1..=k_max {
                let design = RidgeDesign::new(z_train.columns(0, k).into_owned());
                let Ok(solver) = design.solver(0.0) else { continue };
                let z_val_k = z_val.columns(0, k).into_owned();
                for j in 0..q {
                    let wy = data.w_train.apply(&ys[j]);
                    let fit = fit_solver(&solver, &ys[j], &wy, m, channels, &FitOptions::default());
                    let Ok(pred) = predict_from_design(&fit, &z_val_k, &data.w_val, &ys[j]) else { continue };
                    let score = pooled_rmse(&pred, &data.y_val.columns(j, 1).into_owned());
                    if best[j].is_none_or(|(b, ..)| score < b) {
                        best[j] = Some((score, m, k, k_max));
                    }
                }
            }
            Ok(best)
        })
        .collect();
    let mut best: Vec<Best> = vec![None; q];
    for cell in cells {
        for (j, cand) in cell?.into_iter().enumerate() {
            if let Some(c) = cand {
                if best[j].is_none_or(|(b, ..)| c.0 < b) {
                    best[j] = Some(c);
                }
            }
        }
    }
    let mut fits = Vec::with_capacity(q);
    let mut proj = Vec::with_capacity(q);
    let mut components = Vec::with_capacity(q);
    let mut val_rmse = Vec::with_capacity(q);
    let mut pred_test = DMatrix::zeros(data.y_test.nrows(), q);
    for (j, b) in best.into_iter().enumerate() {
        let (score, m, k, k_max) = b.ok_or_else(|| ProtocolError::NoCandidate(format!("response {}", j + 1)))?;
        let s = sig_dim(channels, m)?;
        let sig_train = SplitData::prefix(&data.sig_train, s);
        let basis = PcaBasis::new(&sig_train)?;
        let fit = projssar_fit_components(basis, &sig_train, &ys[j], &data.w_train, m, channels, k)?;
        let pred = predict_projssar(&fit, &SplitData::prefix(&data.sig_test, s), &data.w_test, &ys[j])?;
        pred_test.set_column(j, &pred.column(0));
        components.push((k, k_max));
        fits.push(fit.inner.clone());
        proj.push(fit);
        val_rmse.push(score);
    }
    Ok((
        PerResponseOutcome {
            test_rmse: rmse(&pred_test, &data.y_test),
            pred_test,
            fits,
            components,
            val_rmse,
        },
        proj,
    ))
}

/// Mean absolute error of the diagonal and off-diagonal entries.
pub fn r_errors(r_hat: &DMatrix<f64>, r_true: &DMatrix<f64>) -> (f64, f64) {
    let q = r_true.nrows();
    let (mut diag, mut off) = (0.0, 0.0);
    for i in 0..q {
        for j in 0..q {
            let e = (r_hat[(i, j)] - r_true[(i, j)]).abs();
            if i == j {
                diag += e;
            } else {
                off += e;
            }
        }
    }
    let off_count = (q * q - q).max(1) as f64;
    (diag / q as f64, off / off_count)
}

/// Diagonal MAE of per-response estimates.
pub fn diagonal_mae(diag_hat: &[f64], r_true: &DMatrix<f64>) -> f64 {
    diag_hat
        .iter()
        .enumerate()
        .map(|(i, d)| (d - r_true[(i, i)]).abs())
        .sum::<f64>()
        / diag_hat.len() as f64
}
