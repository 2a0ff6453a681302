//! Synthetic datasets: lattice layouts, Gaussian-process covariates, the
//! three mean designs and responses solved from the SAR identity.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{solve_sar, LinalgError};
use crate::path::{augment, Path, PathError};
use crate::signature::{signature, SignatureError};
use crate::spatial::{SpatialError, SpatialWeights, WeightSpec};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("cannot place {n} units on a {side}x{side} grid")]
    TooManyUnits { n: usize, side: usize },
    #[error("covariance factorisation failed even with jitter {0:e}")]
    Factorization(f64),
    #[error("response system is singular (the spectral radius of Rᵀ⊗W must stay below 1): {0}")]
    Singular(#[source] LinalgError),
    #[error("the mixed design needs Z paths")]
    MissingZ,
    #[error("unknown R preset `{0}` (expected weak, moderate or high)")]
    UnknownPreset(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

pub type Result<T> = std::result::Result<T, SimulationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Weighted order-2 signature of the augmented path.
    Sig2,
    /// Weighted terminal values.
    Terminal,
    /// Terminal values of `X` for odd responses and of `Z` for even ones.
    Mixed,
}

impl std::str::FromStr for Design {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sig2" => Ok(Self::Sig2),
            "terminal" => Ok(Self::Terminal),
            "mixed" => Ok(Self::Mixed),
            _ => Err(format!("unknown design `{s}` (expected sig2, terminal or mixed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RPreset {
    Weak,
    Moderate,
    High,
}

impl RPreset {
    pub fn matrix(self) -> DMatrix<f64> {
        let rows: [f64; 16] = match self {
            RPreset::Weak => [
                0.40, -0.10, 0.20, 0.05, //
                -0.20, 0.35, 0.10, -0.10, //
                0.15, 0.10, 0.30, 0.20, //
                0.05, -0.15, 0.15, 0.25,
            ],
            RPreset::Moderate => [
                0.6, -0.2, 0.4, 0.2, //
                -0.4, 0.6, 0.2, -0.2, //
                0.3, 0.2, 0.5, 0.4, //
                0.1, -0.3, 0.3, 0.4,
            ],
            RPreset::High => [
                0.9, -0.6, 0.7, -0.7, //
                -0.8, 0.7, 0.8, 0.6, //
                0.6, 0.7, 0.7, 0.9, //
                -0.7, 0.8, 0.7, 0.6,
            ],
        };
        DMatrix::from_row_slice(4, 4, &rows)
    }
}

pub fn builtin_r(name: &str) -> Result<DMatrix<f64>> {
    let preset = match name {
        "weak" | "w" => RPreset::Weak,
        "moderate" | "mod" => RPreset::Moderate,
        "high" | "h" => RPreset::High,
        _ => return Err(SimulationError::UnknownPreset(name.to_string())),
    };
    Ok(preset.matrix())
}

/// 0.4 on the diagonal, 0.1 elsewhere.
pub fn default_sigma(q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(q, q, |i, j| if i == j { 0.4 } else { 0.1 })
}

/// Independent random streams per component of a dataset.
pub mod stream {
    pub const COORDS: u64 = 1;
    pub const PATHS_X: u64 = 2;
    pub const PATHS_Z: u64 = 3;
    pub const ETA: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const REPLICATION: u64 = 1 << 32;
}

pub fn component_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Seed of replication `rep` under a base seed.
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    component_rng(base, stream::REPLICATION + rep).next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid_side: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub design: Design,
    #[serde(with = "crate::estimator::row_major")]
    pub r: DMatrix<f64>,
    #[serde(with = "crate::estimator::row_major")]
    pub sigma: DMatrix<f64>,
    pub n_times: usize,
    pub slope_range: f64,
    pub weights: WeightSpec,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid_side: 60,
            n: 200,
            p: 2,
            q: 4,
            design: Design::Sig2,
            r: RPreset::Weak.matrix(),
            sigma: default_sigma(4),
            n_times: 101,
            slope_range: 3.0,
            weights: WeightSpec::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(SimulationError::InvalidConfig { field, reason });
        if self.q == 0 {
            return bad("Q", "must be at least 1".into());
        }
        if self.p == 0 {
            return bad("P", "must be at least 1".into());
        }
        if self.n < 2 {
            return bad("n", "must be at least 2".into());
        }
        if self.n > self.grid_side * self.grid_side {
            return Err(SimulationError::TooManyUnits {
                n: self.n,
                side: self.grid_side,
            });
        }
        if self.n_times < 2 {
            return bad("n_times", "must be at least 2".into());
        }
        if !(self.slope_range >= 0.0 && self.slope_range.is_finite()) {
            return bad("slope_range", "must be finite and non-negative".into());
        }
        if self.r.shape() != (self.q, self.q) {
            return bad("R", format!("must be {0}x{0}, got {1:?}", self.q, self.r.shape()));
        }
        if self.r.iter().any(|v| !(v.abs() <= 1.0)) {
            return bad("R", "entries must lie in [-1, 1]".into());
        }
        if self.sigma.shape() != (self.q, self.q) {
            return bad("Sigma", format!("must be {0}x{0}, got {1:?}", self.q, self.sigma.shape()));
        }
        if self.sigma.iter().any(|v| !v.is_finite()) || (&self.sigma - self.sigma.transpose()).amax() > 1e-12 {
            return bad("Sigma", "must be finite and symmetric".into());
        }
        if self.sigma.clone().cholesky().is_none() {
            return bad("Sigma", "must be positive definite".into());
        }
        Ok(())
    }
}

/// `n` distinct lattice points of a `side × side` grid, uniformly without
/// replacement.
pub fn gen_coords(grid_side: usize, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    let cells = grid_side * grid_side;
    if n > cells {
        return Err(SimulationError::TooManyUnits { n, side: grid_side });
    }
    let mut rng = component_rng(seed, stream::COORDS);
    Ok(sample(&mut rng, cells, n)
        .into_iter()
        .map(|c| [(c % grid_side) as f64, (c / grid_side) as f64])
        .collect())
}

pub fn time_grid(n_times: usize) -> Vec<f64> {
    (0..n_times).map(|i| i as f64 / (n_times - 1) as f64).collect()
}

/// `exp(−|s − t|)` on the grid.
pub fn gp_covariance(times: &[f64]) -> DMatrix<f64> {
    let k = times.len();
    DMatrix::from_fn(k, k, |i, j| (-(times[i] - times[j]).abs()).exp())
}

/// Lower Cholesky factor of `cov + jitter·I`, escalating the jitter tenfold
/// from 1e-10 up to 1e-6.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut jitter = JITTER_START;
    loop {
        let mut a = cov.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(ch) = a.cholesky() {
            return Ok(ch.unpack());
        }
        if jitter >= JITTER_MAX {
            return Err(SimulationError::Factorization(jitter));
        }
        jitter *= 10.0;
    }
}

fn gp_paths_with<R: Rng>(
    n: usize,
    p: usize,
    n_times: usize,
    slope_range: f64,
    rng: &mut R,
) -> Result<Vec<Path>> {
    if n_times < 2 {
        return Err(SimulationError::InvalidConfig {
            field: "n_times",
            reason: "must be at least 2".into(),
        });
    }
    let times = time_grid(n_times);
    let chol = psd_factor(&gp_covariance(&times))?;
    let mut paths = Vec::with_capacity(n);
    for _ in 0..n {
        let mut values = vec![0.0; n_times * p];
        for ch in 0..p {
            let slope = rng.random_range(-slope_range..=slope_range);
            let z = nalgebra::DVector::from_fn(n_times, |_, _| rng.sample::<f64, _>(StandardNormal));
            let f = &chol * z;
            for (t, time) in times.iter().enumerate() {
                values[t * p + ch] = slope * time + f[t];
            }
        }
        paths.push(Path::from_flat(times.clone(), values, p)?);
    }
    Ok(paths)
}

/// `X_p(t) = γ_p t + f_p(t)` on `n_times` equally spaced stamps of `[0, 1]`,
/// `γ_p ~ U[−slope_range, slope_range]`, `f_p` a GP with kernel `exp(−|s−t|)`.
pub fn gen_gp_paths(n: usize, p: usize, n_times: usize, slope_range: f64, seed: u64) -> Result<Vec<Path>> {
    gp_paths_with(n, p, n_times, slope_range, &mut component_rng(seed, stream::PATHS_X))
}

/// Raw features entering `θ` for one response column.
fn features(design: Design, q: usize, x: &Path, z: Option<&Path>) -> Result<Vec<f64>> {
    let terminal = |p: &Path| p.value(p.len() - 1).to_vec();
    Ok(match design {
        Design::Sig2 => signature(&augment(x), 2)?.into_coeffs(),
        Design::Terminal => terminal(x),
        Design::Mixed => {
            // responses are 1-based in the design: q = 1, 3 use X
            if q.is_multiple_of(2) {
                terminal(x)
            } else {
                terminal(z.ok_or(SimulationError::MissingZ)?)
            }
        }
    })
}

pub fn feature_count(design: Design, p: usize) -> usize {
    match design {
        Design::Sig2 => (p + 1) + (p + 1) * (p + 1),
        Design::Terminal | Design::Mixed => p,
    }
}

/// `η ~ U[0, 1]`, one column per response; a column summing to exactly zero
/// is redrawn.
pub fn gen_eta<R: Rng>(rows: usize, q: usize, rng: &mut R) -> DMatrix<f64> {
    let mut eta = DMatrix::zeros(rows, q);
    for j in 0..q {
        loop {
            for i in 0..rows {
                eta[(i, j)] = rng.random::<f64>();
            }
            if eta.column(j).sum() > 0.0 {
                break;
            }
        }
    }
    eta
}

/// `θ_{i,q} = Σ_k feature_k(i) η_{k,q} / Σ_k' η_{k',q}`.
pub fn theta_from_eta(
    design: Design,
    paths_x: &[Path],
    paths_z: Option<&[Path]>,
    eta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if design == Design::Mixed && paths_z.is_none() {
        return Err(SimulationError::MissingZ);
    }
    let n = paths_x.len();
    let q = eta.ncols();
    let sums: Vec<f64> = (0..q).map(|j| eta.column(j).sum()).collect();
    let mut theta = DMatrix::zeros(n, q);
    let sig_feats: Option<Vec<Vec<f64>>> = match design {
        Design::Sig2 => Some(
            paths_x
                .iter()
                .map(|x| features(design, 0, x, None))
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };
    for i in 0..n {
        for j in 0..q {
            let f = match &sig_feats {
                Some(all) => all[i].clone(),
                None => features(design, j, &paths_x[i], paths_z.map(|z| &z[i]))?,
            };
            if f.len() != eta.nrows() {
                return Err(SimulationError::InvalidConfig {
                    field: "eta",
                    reason: format!("expected {} rows, got {}", f.len(), eta.nrows()),
                });
            }
            theta[(i, j)] = f.iter().zip(eta.column(j).iter()).map(|(a, b)| a * b).sum::<f64>() / sums[j];
        }
    }
    Ok(theta)
}

/// Draws `η` from the seed and returns `(θ, η)`.
pub fn gen_theta(
    design: Design,
    paths_x: &[Path],
    paths_z: Option<&[Path]>,
    q: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = paths_x.first().map_or(0, |x| x.channels());
    let mut rng = component_rng(seed, stream::ETA);
    let eta = gen_eta(feature_count(design, p), q, &mut rng);
    Ok((theta_from_eta(design, paths_x, paths_z, &eta)?, eta))
}

/// Rows `e_i ~ N_Q(0, Σ)`.
pub fn gen_noise(n: usize, sigma: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let l = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| SimulationError::InvalidConfig {
            field: "Sigma",
            reason: "must be positive definite".into(),
        })?
        .unpack();
    let mut rng = component_rng(seed, stream::NOISE);
    let z = DMatrix::from_fn(n, sigma.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(z * l.transpose())
}

/// Solves `Y = WYR + θ + e` and returns `(Y, e)`.
pub fn gen_response(
    theta: &DMatrix<f64>,
    w: &SpatialWeights,
    r: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let e = gen_noise(theta.nrows(), sigma, seed)?;
    let y = solve_sar(w, r, &(theta + &e)).map_err(SimulationError::Singular)?;
    Ok((y, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub design: Design,
    #[serde(with = "crate::estimator::row_major")]
    pub r: DMatrix<f64>,
    #[serde(with = "crate::estimator::row_major")]
    pub sigma: DMatrix<f64>,
    #[serde(with = "crate::estimator::row_major")]
    pub eta: DMatrix<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub coords: Vec<[f64; 2]>,
    pub paths_x: Vec<Path>,
    pub paths_z: Option<Vec<Path>>,
    /// Covariate paths as fitters see them: the last stamp is dropped for the
    /// terminal and mixed designs.
    pub fit_paths: Vec<Path>,
    pub y: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub w: SpatialWeights,
    pub truth: SimTruth,
}

impl SimDataset {
    /// `‖Y − WYR − θ − e‖_∞`.
    pub fn identity_residual(&self) -> f64 {
        (&self.y - self.w.apply(&self.y) * &self.truth.r - &self.theta - &self.noise).amax()
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let coords = gen_coords(cfg.grid_side, cfg.n, cfg.seed)?;
    let paths_x = gen_gp_paths(cfg.n, cfg.p, cfg.n_times, cfg.slope_range, cfg.seed)?;
    let paths_z = match cfg.design {
        Design::Mixed => Some(gp_paths_with(
            cfg.n,
            cfg.p,
            cfg.n_times,
            cfg.slope_range,
            &mut component_rng(cfg.seed, stream::PATHS_Z),
        )?),
        _ => None,
    };
    let (theta, eta) = gen_theta(cfg.design, &paths_x, paths_z.as_deref(), cfg.q, cfg.seed)?;
    let w = cfg.weights.build(&coords)?;
    let (y, noise) = gen_response(&theta, &w, &cfg.r, &cfg.sigma, cfg.seed)?;
    let fit_paths = match cfg.design {
        Design::Sig2 => paths_x.clone(),
        Design::Terminal | Design::Mixed => paths_x
            .iter()
            .map(|p| p.truncated(cfg.n_times - 1))
            .collect::<std::result::Result<_, _>>()?,
    };
    Ok(SimDataset {
        coords,
        paths_x,
        paths_z,
        fit_paths,
        y,
        theta,
        noise,
        w,
        truth: SimTruth {
            design: cfg.design,
            r: cfg.r.clone(),
            sigma: cfg.sigma.clone(),
            eta,
            seed: cfg.seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_first_rows() {
        let w = builtin_r("weak").unwrap();
        assert_eq!(w.row(0).iter().copied().collect::<Vec<_>>(), vec![0.40, -0.10, 0.20, 0.05]);
        let m = builtin_r("moderate").unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![0.6, -0.2, 0.4, 0.2]);
        let h = builtin_r("high").unwrap();
        assert_eq!(h.row(0).iter().copied().collect::<Vec<_>>(), vec![0.9, -0.6, 0.7, -0.7]);
        assert!(matches!(builtin_r("extreme"), Err(SimulationError::UnknownPreset(_))));
    }

    #[test]
    fn coords_exhaust_small_grid() {
        let mut c = gen_coords(3, 9, 5).unwrap();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut all: Vec<[f64; 2]> = (0..3).flat_map(|x| (0..3).map(move |y| [x as f64, y as f64])).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, all);
        assert!(matches!(gen_coords(3, 10, 5), Err(SimulationError::TooManyUnits { .. })));
    }

    #[test]
    fn zero_r_gives_theta_plus_noise() {
        let cfg = SimConfig {
            n: 30,
            r: DMatrix::zeros(4, 4),
            seed: 4,
            ..Default::default()
        };
        let d = simulate(&cfg).unwrap();
        assert!((&d.y - &d.theta - &d.noise).amax() < 1e-12);
    }

    #[test]
    fn equal_eta_gives_feature_mean() {
        let x = Path::new(vec![0.0, 1.0], vec![vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap();
        let eta = DMatrix::from_element(2, 1, 0.3);
        let theta = theta_from_eta(Design::Terminal, &[x], None, &eta).unwrap();
        assert!((theta[(0, 0)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_sigma_is_named() {
        let mut cfg = SimConfig::default();
        cfg.sigma[(0, 0)] = -1.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("Sigma"), "{err}");
    }
}
