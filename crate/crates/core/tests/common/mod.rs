#![allow(dead_code)]

use mpenssar::path::{augment, AugmentedPath, Path};
use mpenssar::selection::TheoryInputs;
use mpenssar::signature::{sig_matrix, with_unit_column};
use mpenssar::spatial::{knn_weights, SpatialWeights};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Piecewise-linear path with `segments` segments, increments in `[-1, 1]`
/// and irregular increasing stamps.
pub fn random_path<R: Rng>(rng: &mut R, channels: usize, segments: usize) -> Path {
    let mut t = 0.0;
    let mut x: Vec<f64> = (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut times = vec![t];
    let mut values = vec![x.clone()];
    for _ in 0..segments {
        t += rng.random_range(0.1..1.0);
        for v in x.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
        times.push(t);
        values.push(x.clone());
    }
    Path::new(times, values).unwrap()
}

/// Shifted signature by a trapezoidal Riemann sum of the iterated integrals,
/// `substeps` per segment, level-major lexicographic.
pub fn riemann_signature(path: &Path, order: usize, substeps: usize) -> Vec<f64> {
    let p = path.channels();
    let mut levels: Vec<Vec<f64>> = (0..=order).map(|k| vec![0.0; p.pow(k as u32)]).collect();
    levels[0][0] = 1.0;
    let rows: Vec<&[f64]> = path.rows().collect();
    for w in rows.windows(2) {
        let dx: Vec<f64> = w[0].iter().zip(w[1]).map(|(a, b)| (b - a) / substeps as f64).collect();
        for _ in 0..substeps {
            let old = levels.clone();
            for k in 1..=order {
                let len = p.pow(k as u32 - 1);
                for a in 0..len {
                    let mid = 0.5 * (old[k - 1][a] + levels[k - 1][a]);
                    for (c, d) in dx.iter().enumerate() {
                        levels[k][a * p + c] += mid * d;
                    }
                }
            }
        }
    }
    levels.into_iter().skip(1).flatten().collect()
}

pub fn random_coords<R: Rng>(rng: &mut R, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect()
}

pub struct Instance {
    pub paths: Vec<AugmentedPath>,
    /// Unit column first.
    pub s_tilde: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub w: SpatialWeights,
    pub lambda: f64,
}

/// Random data with signature design of order `m` on `p`-channel paths.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, q: usize, p: usize, m: usize) -> Instance {
    let paths: Vec<AugmentedPath> = (0..n).map(|_| augment(&random_path(rng, p, 6))).collect();
    let s_tilde = with_unit_column(&sig_matrix(&paths, m).unwrap());
    let coords = random_coords(rng, n);
    let w = knn_weights(&coords, 4.min(n - 1), true).unwrap();
    let y = DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..2.0));
    Instance {
        paths,
        s_tilde,
        y,
        w,
        lambda: 10f64.powf(rng.random_range(-3.0..0.0)),
    }
}

/// `(S̃ᵀS̃ + nΛ)⁻¹ S̃ᵀ B` with `Λ = diag(0, λ, …, λ)` by dense LU.
pub fn normal_equations(s_tilde: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = s_tilde.nrows() as f64;
    let mut a = s_tilde.transpose() * s_tilde;
    for i in 1..a.nrows() {
        a[(i, i)] += n * lambda;
    }
    a.lu().solve(&(s_tilde.transpose() * b)).expect("nonsingular normal equations")
}

/// `(1/n)‖B − S̃θ‖² + λ‖β‖²` where `θ = (μ; β)`.
pub fn penalized_risk(s_tilde: &DMatrix<f64>, b: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64) -> f64 {
    let n = s_tilde.nrows() as f64;
    let beta = theta.rows(1, theta.nrows() - 1);
    (b - s_tilde * theta).norm_squared() / n + lambda * beta.norm_squared()
}

pub fn s_p(p: usize, m: usize) -> f64 {
    let mut total = 0.0;
    let mut term = 1.0;
    for _ in 0..m {
        term *= p as f64;
        total += term;
    }
    total
}

/// Theory constants written out term by term, independently of the library:
/// `[K, K1, K2, K3, K4, n1, n2, n3]`.
pub fn theory_oracle(t: &TheoryInputs) -> [f64; 8] {
    let pi = std::f64::consts::PI;
    let q = t.q as f64;
    let ks = t.k_neighb * t.k_y * q * q.sqrt() + t.k_x.exp() * t.alpha;
    let big_k = 2.0 * (t.k_y + t.k_neighb * t.k_y * q.powf(1.5) + t.k_x.exp() * t.alpha);
    let ratio = 1.0 - (s_p(t.p, t.m_star) / s_p(t.p, t.m_star + 1)).sqrt();
    let k1 = t.k_pen.powi(2) / (9216.0 * big_k.powi(2) * ks.powi(2)) * ratio.powi(2);
    let k2 = t.k_pen.powi(2) / (8.0 * t.k_y.powi(4)) * ratio.powi(2);
    let k3 = ratio.powi(2) * t.k_pen.powi(2) / 8.0
        * f64::min(1.0 / t.k_y.powi(4), 1.0 / (1152.0 * big_k.powi(2) * ks.powi(2)));
    let k4 = f64::min(1.0 / (2304.0 * big_k.powi(2) * ks.powi(2)), 1.0 / (2.0 * t.k_y.powi(4)));
    let s_next = s_p(t.p, t.m_star + 1);
    let inner1 = (s_next.sqrt() - s_p(t.p, t.m_star).sqrt()) / s_next.sqrt() * t.k_pen
        / (864.0 * big_k * pi.sqrt() * (t.alpha * t.k_x.exp() + t.k_neighb * t.k_y * q.powf(2.5) / s_next.sqrt()));
    let n1 = inner1.powf(1.0 / (t.kappa - 0.5)).ceil().max(1.0);
    let brace = |m: usize| t.alpha * t.k_x.exp() * (s_p(t.p, m) * pi).sqrt() + t.k_neighb * t.k_y * q.powf(2.5) * pi.sqrt();
    let n2 = ((432.0 * big_k * brace(t.m_n2)).powi(2) / t.delta.powi(2)).ceil().max(1.0);
    let gap = t.l_gap;
    let n3 = f64::max(1728.0 * big_k * brace(t.m_star - 1) / gap, 2.0 * t.k_pen * s_p(t.p, t.m_star).sqrt() / gap)
        .powf(1.0 / t.kappa)
        .ceil()
        .max(1.0);
    [big_k, k1, k2, k3, k4, n1, n2, n3]
}

/// The misselection bound written out term by term.
pub fn bound_oracle(t: &TheoryInputs, k3: f64, k4: f64, n: f64, tail: usize) -> f64 {
    let mut total = 148.0 * t.m_star as f64 * (-n * k4 / 16.0 * t.l_gap.powi(2)).exp();
    for m in t.m_star + 1..=t.m_star + tail {
        total += 74.0 * (-k3 * s_p(t.p, m) * n.powf(1.0 - 2.0 * t.kappa)).exp();
    }
    total
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn random_box<R: Rng>(rng: &mut R, q: usize, half_width: f64) -> DMatrix<f64> {
    DMatrix::from_fn(q, q, |_, _| rng.random_range(-half_width..half_width))
}

/// `(A, B) = ((I − P)Y, (I − P)WY)` with the ridge hat matrix built densely.
pub fn residualized_pair(s_tilde: &DMatrix<f64>, y: &DMatrix<f64>, w: &SpatialWeights, lambda: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let wy = w.to_dense() * y;
    let a = y - s_tilde * normal_equations(s_tilde, y, lambda);
    let b = &wy - s_tilde * normal_equations(s_tilde, &wy, lambda);
    (a, b)
}

/// Analytic gradient of the penalised risk in `θ = (μ; β)`.
pub fn risk_gradient(s_tilde: &DMatrix<f64>, b: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = s_tilde.nrows() as f64;
    let mut g = s_tilde.transpose() * (s_tilde * theta - b) * (2.0 / n);
    for i in 1..g.nrows() {
        for j in 0..g.ncols() {
            g[(i, j)] += 2.0 * lambda * theta[(i, j)];
        }
    }
    g
}

/// `vec(Y)` from `(I − Rᵀ ⊗ W) vec(Y) = vec(B)` by dense LU.
pub fn kronecker_solve(w: &DMatrix<f64>, r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, q) = b.shape();
    let big = DMatrix::identity(n * q, n * q) - r.transpose().kronecker(w);
    let vec_b = DMatrix::from_column_slice(n * q, 1, b.as_slice());
    let sol = big.lu().solve(&vec_b).expect("nonsingular Kronecker system");
    DMatrix::from_column_slice(n, q, sol.as_slice())
}

/// Richardson extrapolation of two trapezoidal sums; the scheme is symmetric
/// so the leading error is `O(h²)` and cancels.
pub fn riemann_signature_extrapolated(path: &Path, order: usize, substeps: usize) -> Vec<f64> {
    let coarse = riemann_signature(path, order, substeps);
    let fine = riemann_signature(path, order, 2 * substeps);
    fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
}
