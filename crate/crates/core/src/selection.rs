//! Truncation-order selection, the slope heuristic for `K_pen`, and the
//! finite-sample constants behind the misselection bound.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{fit_design, EstimatorError, FitOptions, RidgeDesign};
use crate::path::AugmentedPath;
use crate::signature::{max_order_within, sig_dim, sig_matrix, SignatureError, DEFAULT_DIM_CAP};
use crate::spatial::SpatialWeights;

pub const DEFAULT_KAPPA: f64 = 0.4;
pub const DEFAULT_TAIL_TERMS: usize = 20;
pub const DEFAULT_GRID_POINTS: usize = 40;
const MIN_GRID_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("kappa must lie in (0, 1/2), got {0}")]
    InvalidKappa(f64),
    #[error("K_pen must be positive and finite, got {0}")]
    InvalidKpen(f64),
    #[error("m_max must be at least 1")]
    InvalidMaxOrder,
    #[error("fit at m = {m} failed: {source}")]
    Fit {
        m: usize,
        #[source]
        source: EstimatorError,
    },
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error("K_pen grid needs at least {MIN_GRID_POINTS} strictly increasing positive points, got {0}")]
    BadGrid(usize),
    #[error("selected order is constant ({0}) over the whole K_pen grid; widen the grid")]
    DegenerateHeuristic(usize),
    #[error("theory input `{0}` must be positive and finite")]
    BadTheoryInput(&'static str),
    #[error("m* must be at least 1")]
    BadTargetOrder,
    #[error("n = {n:e} is below the validity threshold max(n1 = {n1:e}, n3 = {n3:e})")]
    BelowThreshold { n: f64, n1: f64, n3: f64 },
}

pub type Result<T> = std::result::Result<T, SelectionError>;

/// `s_P(m)` in floating point, without the dimension cap.
pub fn sig_dim_f64(channels: usize, m: usize) -> f64 {
    let p = channels as f64;
    (1..=m).map(|k| p.powi(k as i32)).sum()
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 0.5 {
        Ok(())
    } else {
        Err(SelectionError::InvalidKappa(kappa))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub k_pen: f64,
    pub kappa: f64,
    pub m_max: usize,
}

impl PenaltyConfig {
    pub fn new(k_pen: f64, kappa: f64, m_max: usize) -> Result<Self> {
        check_kappa(kappa)?;
        if !(k_pen > 0.0 && k_pen.is_finite()) {
            return Err(SelectionError::InvalidKpen(k_pen));
        }
        if m_max == 0 {
            return Err(SelectionError::InvalidMaxOrder);
        }
        Ok(Self {
            k_pen,
            kappa,
            m_max,
        })
    }

    /// `m_max` is the largest order whose signature fits the default cap.
    pub fn with_default_order(k_pen: f64, kappa: f64, channels: usize) -> Result<Self> {
        Self::new(k_pen, kappa, max_order_within(channels, DEFAULT_DIM_CAP))
    }
}

/// `K_pen n^{−κ} √s_P(m)`.
pub fn pen(n: usize, m: usize, channels: usize, cfg: &PenaltyConfig) -> f64 {
    pen_value(n, m, channels, cfg.k_pen, cfg.kappa)
}

fn pen_value(n: usize, m: usize, channels: usize, k_pen: f64, kappa: f64) -> f64 {
    k_pen * (n as f64).powf(-kappa) * sig_dim_f64(channels, m).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionRow {
    pub m: usize,
    pub l_hat: f64,
    pub pen: f64,
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub m_hat: usize,
    pub table: Vec<CriterionRow>,
}

/// Unpenalised training risk `L̂(m)` for `m = 1..=m_max`, from the
/// signature matrix at `m_max` (lower orders are its column prefixes).
pub fn loss_table_from_sig(
    sig_max: &DMatrix<f64>,
    channels: usize,
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    lambda: f64,
    m_max: usize,
) -> Result<Vec<f64>> {
    (1..=m_max)
        .into_par_iter()
        .map(|m| {
            let s = sig_dim(channels, m)?;
            let design = RidgeDesign::new(sig_max.columns(0, s).into_owned());
            fit_design(&design, y, w, m, channels, lambda, &FitOptions::default())
                .map(|f| f.train_objective)
                .map_err(|source| SelectionError::Fit { m, source })
        })
        .collect()
}

pub fn loss_table(
    paths: &[AugmentedPath],
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    lambda: f64,
    m_max: usize,
) -> Result<Vec<f64>> {
    if m_max == 0 {
        return Err(SelectionError::InvalidMaxOrder);
    }
    let channels = paths.first().map_or(0, |p| p.channels());
    let sig = sig_matrix(paths, m_max)?;
    loss_table_from_sig(&sig, channels, y, w, lambda, m_max)
}

/// Criterion table for `l_hat[m − 1] = L̂(m)`; ties go to the smaller order.
pub fn select_from_table(l_hat: &[f64], n: usize, channels: usize, k_pen: f64, kappa: f64) -> Selection {
    let table: Vec<CriterionRow> = l_hat
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let m = i + 1;
            let p = pen_value(n, m, channels, k_pen, kappa);
            CriterionRow {
                m,
                l_hat: l,
                pen: p,
                criterion: l + p,
            }
        })
        .collect();
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.criterion < table[best].criterion {
            best = i;
        }
    }
    Selection {
        m_hat: best + 1,
        table,
    }
}

pub fn select_order(
    paths: &[AugmentedPath],
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    lambda: f64,
    cfg: &PenaltyConfig,
) -> Result<Selection> {
    let channels = paths.first().map_or(0, |p| p.channels());
    let l_hat = loss_table(paths, y, w, lambda, cfg.m_max)?;
    Ok(select_from_table(&l_hat, paths.len(), channels, cfg.k_pen, cfg.kappa))
}

/// Log-spaced grid over `[10⁻³, 10²] ×` the range of `L̂`.
pub fn default_kpen_grid(l_hat: &[f64]) -> Vec<f64> {
    let (lo, hi) = l_hat
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    let scale = if range > 0.0 && range.is_finite() { range } else { 1.0 };
    let (a, b) = ((1e-3 * scale).ln(), (1e2 * scale).ln());
    let k = DEFAULT_GRID_POINTS;
    (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeHeuristic {
    pub k_pen: f64,
    /// Grid index of the first value after the largest drop of `m̂`.
    pub jump_index: usize,
    pub grid: Vec<f64>,
    pub m_hats: Vec<usize>,
}

/// Dimension-jump calibration on a precomputed `L̂` table.
pub fn slope_heuristic_from_table(
    l_hat: &[f64],
    n: usize,
    channels: usize,
    kappa: f64,
    grid: &[f64],
) -> Result<SlopeHeuristic> {
    check_kappa(kappa)?;
    let valid = grid.len() >= MIN_GRID_POINTS
        && grid.iter().all(|k| *k > 0.0 && k.is_finite())
        && grid.windows(2).all(|w| w[0] < w[1]);
    if !valid {
        return Err(SelectionError::BadGrid(grid.len()));
    }
    let m_hats: Vec<usize> = grid
        .iter()
        .map(|&k| select_from_table(l_hat, n, channels, k, kappa).m_hat)
        .collect();
    let mut best: Option<(usize, usize)> = None;
    for j in 0..m_hats.len() - 1 {
        if m_hats[j] > m_hats[j + 1] {
            let drop = m_hats[j] - m_hats[j + 1];
            if best.is_none_or(|(d, _)| drop > d) {
                best = Some((drop, j + 1));
            }
        }
    }
    let Some((_, jump_index)) = best else {
        return Err(SelectionError::DegenerateHeuristic(m_hats[0]));
    };
    Ok(SlopeHeuristic {
        k_pen: 2.0 * grid[jump_index],
        jump_index,
        grid: grid.to_vec(),
        m_hats,
    })
}

/// Slope heuristic; `grid = None` uses [`default_kpen_grid`].
pub fn slope_heuristic(
    paths: &[AugmentedPath],
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    lambda: f64,
    kappa: f64,
    grid: Option<&[f64]>,
    m_max: usize,
) -> Result<SlopeHeuristic> {
    let channels = paths.first().map_or(0, |p| p.channels());
    let l_hat = loss_table(paths, y, w, lambda, m_max)?;
    let default;
    let grid = match grid {
        Some(g) => g,
        None => {
            default = default_kpen_grid(&l_hat);
            &default
        }
    };
    slope_heuristic_from_table(&l_hat, paths.len(), channels, kappa, grid)
}

/// Inputs of the finite-sample analysis. `p` is the channel count entering
/// `s_P`; `l_gap` is `L(m*−1) − σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    #[serde(rename = "K_Y")]
    pub k_y: f64,
    #[serde(rename = "K_X")]
    pub k_x: f64,
    #[serde(rename = "K_neighb")]
    pub k_neighb: f64,
    pub alpha: f64,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub sigma2: f64,
    #[serde(rename = "L_gap")]
    pub l_gap: f64,
    pub m_star: usize,
    pub kappa: f64,
    #[serde(rename = "K_pen")]
    pub k_pen: f64,
    /// Deviation level for `n2`.
    pub delta: f64,
    /// Order at which `n2` is evaluated.
    pub m_n2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub inputs: TheoryInputs,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    #[serde(rename = "K4")]
    pub k4: f64,
    /// Integer thresholds, held as `f64` because they routinely exceed `u64`.
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
}

fn ceil_at_least_one(x: f64) -> f64 {
    x.ceil().max(1.0)
}

pub fn theory_constants(inp: &TheoryInputs) -> Result<TheoryConstants> {
    check_kappa(inp.kappa)?;
    let positive = [
        ("K_Y", inp.k_y),
        ("K_neighb", inp.k_neighb),
        ("alpha", inp.alpha),
        ("sigma2", inp.sigma2),
        ("L_gap", inp.l_gap),
        ("K_pen", inp.k_pen),
        ("delta", inp.delta),
        ("Q", inp.q as f64),
        ("P", inp.p as f64),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SelectionError::BadTheoryInput(name));
        }
    }
    if !(inp.k_x >= 0.0 && inp.k_x.is_finite()) {
        return Err(SelectionError::BadTheoryInput("K_X"));
    }
    if inp.m_star == 0 {
        return Err(SelectionError::BadTargetOrder);
    }
    let q = inp.q as f64;
    let s = |m: usize| sig_dim_f64(inp.p, m);
    let (s_star, s_next) = (s(inp.m_star), s(inp.m_star + 1));
    let ex = inp.k_x.exp();
    let pi_sqrt = std::f64::consts::PI.sqrt();

    let c = inp.k_neighb * inp.k_y * q.powf(1.5) + ex * inp.alpha;
    let k = 2.0 * (inp.k_y + c);
    let rho = (1.0 - (s_star / s_next).sqrt()).powi(2);
    let kp2 = inp.k_pen * inp.k_pen;
    let k1 = kp2 * rho / (9216.0 * k * k * c * c);
    let k2 = kp2 * rho / (8.0 * inp.k_y.powi(4));
    let k3 = rho * kp2 / 8.0 * (1.0 / inp.k_y.powi(4)).min(1.0 / (1152.0 * k * k * c * c));
    let k4 = (1.0 / (2304.0 * k * k * c * c)).min(1.0 / (2.0 * inp.k_y.powi(4)));

    let q52 = q.powf(2.5);
    let base1 = (s_next.sqrt() - s_star.sqrt()) / s_next.sqrt() * inp.k_pen
        / (864.0 * k * pi_sqrt * (inp.alpha * ex + inp.k_neighb * inp.k_y * q52 / s_next.sqrt()));
    let n1 = ceil_at_least_one(base1.powf(1.0 / (inp.kappa - 0.5)));

    let inner = |m: usize| inp.alpha * ex * (s(m) * std::f64::consts::PI).sqrt() + inp.k_neighb * inp.k_y * q52 * pi_sqrt;
    let n2 = ceil_at_least_one((432.0 * k * inner(inp.m_n2)).powi(2) / (inp.delta * inp.delta));

    let a3 = 1728.0 * k * inner(inp.m_star - 1) / inp.l_gap;
    let b3 = 2.0 * inp.k_pen * s_star.sqrt() / inp.l_gap;
    let n3 = ceil_at_least_one(a3.max(b3).powf(1.0 / inp.kappa));

    Ok(TheoryConstants {
        inputs: *inp,
        k,
        k1,
        k2,
        k3,
        k4,
        n1,
        n2,
        n3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisselectionBound {
    pub raw: f64,
    pub clamped: f64,
    /// The first omitted tail term, bounding the truncation error.
    pub remainder: f64,
}

/// Bound evaluated at `n` regardless of the validity threshold.
pub fn evaluate_bound(c: &TheoryConstants, n: f64, tail_terms: usize) -> MisselectionBound {
    let inp = &c.inputs;
    let first = 148.0 * inp.m_star as f64 * (-n * c.k4 / 16.0 * inp.l_gap * inp.l_gap).exp();
    let expo = n.powf(1.0 - 2.0 * inp.kappa);
    let term = |m: usize| 74.0 * (-c.k3 * sig_dim_f64(inp.p, m) * expo).exp();
    let tail: f64 = (inp.m_star + 1..=inp.m_star + tail_terms).map(term).sum();
    let raw = first + tail;
    MisselectionBound {
        raw,
        clamped: raw.clamp(0.0, 1.0),
        remainder: term(inp.m_star + tail_terms + 1),
    }
}

pub fn misselection_bound(c: &TheoryConstants, n: f64, tail_terms: usize) -> Result<MisselectionBound> {
    if !(n >= c.n1.max(c.n3)) {
        return Err(SelectionError::BelowThreshold {
            n,
            n1: c.n1,
            n3: c.n3,
        });
    }
    Ok(evaluate_bound(c, n, tail_terms))
}

/// Empirical check of the boundedness chain on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBoundReport {
    pub k_y: f64,
    pub k_neighb: usize,
    pub max_neighbor_response: f64,
    pub neighbor_bound: f64,
    /// Largest `‖S̃^m(X_i)‖ / exp(‖X_i‖_TV)` over units.
    pub max_signature_ratio: f64,
}

impl HBoundReport {
    pub fn holds(&self) -> bool {
        self.max_neighbor_response <= self.neighbor_bound * (1.0 + 1e-12)
            && self.max_signature_ratio <= 1.0 + 1e-12
    }
}

pub fn h_bound_check(
    paths: &[AugmentedPath],
    y: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
) -> Result<HBoundReport> {
    let k_y = y.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let k_neighb = w.max_neighbors();
    let wy = w.apply(y);
    let max_neighbor_response = wy.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let mut max_signature_ratio = 0.0f64;
    for p in paths {
        let sig = crate::signature::signature(p, m)?;
        let full = (1.0 + sig.norm().powi(2)).sqrt();
        let tv = crate::path::total_variation(&p.inner);
        max_signature_ratio = max_signature_ratio.max(full / tv.exp());
    }
    Ok(HBoundReport {
        k_y,
        k_neighb,
        max_neighbor_response,
        neighbor_bound: (y.ncols() as f64).sqrt() * k_neighb as f64 * k_y,
        max_signature_ratio,
    })
}
