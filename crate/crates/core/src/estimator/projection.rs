//! ProjSSAR: principal components of the standardised signature, then the
//! single-response fit on the scores.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    check_shapes, fit_design, paths_channels, predict_from_design, EstimatorError, FitOptions,
    MpenssarFit, Result, RidgeDesign,
};
use crate::path::AugmentedPath;
use crate::signature::sig_matrix;
use crate::spatial::SpatialWeights;

/// Largest `k` with cumulative share of the first `k` eigenvalues strictly
/// below `cap`, but at least 1. Eigenvalues must be sorted decreasing.
pub fn components_below_inertia(eigenvalues: &[f64], cap: f64) -> usize {
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 1;
    }
    let mut cum = 0.0;
    let mut k = 0;
    for v in eigenvalues {
        cum += v.max(0.0);
        if cum / total < cap {
            k += 1;
        } else {
            break;
        }
    }
    k.max(1)
}

/// Principal axes of the standardised signature coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    /// Signature columns with positive variance.
    pub kept_columns: Vec<usize>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Correlation eigenvalues in decreasing order. Only the leading
    /// `min(n, kept)` are listed; the rest are zero.
    pub eigenvalues: Vec<f64>,
    /// Matching unit eigenvectors, one per column.
    #[serde(with = "super::row_major")]
    pub axes: DMatrix<f64>,
}

impl PcaBasis {
    pub fn new(sig: &DMatrix<f64>) -> Result<Self> {
        let n = sig.nrows();
        if n < 2 {
            return Err(EstimatorError::Dimension("ProjSSAR needs n >= 2".into()));
        }
        let nf = n as f64;
        let (mut kept, mut means, mut scales) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..sig.ncols() {
            let col = sig.column(j);
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                kept.push(j);
                means.push(mean);
                scales.push(sd);
            }
        }
        if kept.is_empty() {
            return Err(EstimatorError::NoVariance);
        }
        let z = standardize(sig, &kept, &means, &scales);
        let (eigenvalues, axes) = if kept.len() <= n {
            sorted_eigen(z.tr_mul(&z) / nf)
        } else {
            // same nonzero spectrum through the n × n Gram; axes v = Zᵀu / √(n ℓ)
            let (vals, u) = sorted_eigen(&z * z.transpose() / nf);
            let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-12 * vals[0]).collect();
            let mut axes = z.tr_mul(&u.select_columns(&keep));
            for (c, &i) in keep.iter().enumerate() {
                axes.column_mut(c).scale_mut(1.0 / (nf * vals[i]).sqrt());
            }
            (keep.iter().map(|&i| vals[i]).collect(), axes)
        };
        Ok(Self {
            kept_columns: kept,
            means,
            scales,
            eigenvalues,
            axes,
        })
    }

    pub fn max_components(&self, inertia_cap: f64) -> usize {
        components_below_inertia(&self.eigenvalues, inertia_cap)
    }

    /// Scores of `sig` on the first `k` axes.
    pub fn scores(&self, sig: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        standardize(sig, &self.kept_columns, &self.means, &self.scales) * self.axes.columns(0, k)
    }
}

fn sorted_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    (
        order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        eig.eigenvectors.select_columns(&order),
    )
}

fn standardize(sig: &DMatrix<f64>, kept: &[usize], means: &[f64], scales: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(sig.nrows(), kept.len(), |i, a| {
        (sig[(i, kept[a])] - means[a]) / scales[a]
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjssarFit {
    pub basis: PcaBasis,
    pub n_components: usize,
    /// Fit on the score design; `beta_hat` has one row per component.
    pub inner: MpenssarFit,
}

impl ProjssarFit {
    pub fn scores(&self, sig: &DMatrix<f64>) -> DMatrix<f64> {
        self.basis.scores(sig, self.n_components)
    }
}

pub fn projssar_fit(
    paths: &[AugmentedPath],
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    inertia_cap: f64,
) -> Result<ProjssarFit> {
    let channels = paths_channels(paths)?;
    let sig = sig_matrix(paths, m)?;
    projssar_fit_design(&sig, y, w, m, channels, inertia_cap)
}

/// ProjSSAR with the component count fixed by the inertia cap.
pub fn projssar_fit_design(
    sig: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    channels: usize,
    inertia_cap: f64,
) -> Result<ProjssarFit> {
    if !(inertia_cap > 0.0 && inertia_cap < 1.0) {
        return Err(EstimatorError::InvalidInertiaCap(inertia_cap));
    }
    let basis = PcaBasis::new(sig)?;
    let k = basis.max_components(inertia_cap);
    projssar_fit_components(basis, sig, y, w, m, channels, k)
}

/// ProjSSAR on the first `k` components of a precomputed basis.
pub fn projssar_fit_components(
    basis: PcaBasis,
    sig: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    channels: usize,
    k: usize,
) -> Result<ProjssarFit> {
    if y.ncols() != 1 {
        return Err(EstimatorError::Dimension(format!(
            "ProjSSAR takes one response column, got {}",
            y.ncols()
        )));
    }
    if k == 0 || k > basis.axes.ncols() {
        return Err(EstimatorError::Dimension(format!(
            "component count {k} outside 1..={}",
            basis.axes.ncols()
        )));
    }
    check_shapes(sig.nrows(), y, w)?;
    let design = RidgeDesign::new(basis.scores(sig, k));
    let inner = fit_design(&design, y, w, m, channels, 0.0, &FitOptions::default())?;
    Ok(ProjssarFit {
        basis,
        n_components: k,
        inner,
    })
}

/// Prediction with `sig_test` the raw order-`m` signature of the test units.
pub fn predict_projssar(
    fit: &ProjssarFit,
    sig_test: &DMatrix<f64>,
    w_full: &SpatialWeights,
    y_train: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    predict_from_design(&fit.inner, &fit.scores(sig_test), w_full, y_train)
}
