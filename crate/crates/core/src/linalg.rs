//! Solvers for the Kronecker-structured system `Y − W·Y·R = B`, i.e.
//! `(I − Rᵀ ⊗ W) vec(Y) = vec(B)`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::spatial::SpatialWeights;

/// Unknown count up to which the system is assembled and factored densely.
pub const DENSE_LIMIT: usize = 5_000;

const PIVOT_RATIO: f64 = 1e-13;
const ITER_TOL: f64 = 1e-13;
const ITER_MAX: usize = 5_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("I − Rᵀ⊗W is numerically singular (pivot ratio {ratio:.3e}); the spectral radius of Rᵀ⊗W likely reaches 1")]
    Singular { ratio: f64 },
    #[error("iterative solve stalled after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Square neighbour operator acting on `n × q` blocks.
pub trait NeighborOperator {
    fn dim(&self) -> usize;
    fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64>;
    fn entry(&self, i: usize, j: usize) -> f64;
}

impl NeighborOperator for SpatialWeights {
    fn dim(&self) -> usize {
        self.n()
    }
    fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        SpatialWeights::apply(self, y)
    }
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

impl NeighborOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self * y
    }
    fn entry(&self, i: usize, j: usize) -> f64 {
        self[(i, j)]
    }
}

/// Solves `Y − W·Y·R = B` for `Y`.
pub fn solve_sar<W: NeighborOperator + ?Sized>(
    w: &W,
    r: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LinalgError> {
    let (n, q) = (w.dim(), r.nrows());
    assert_eq!(rhs.shape(), (n, q), "right-hand side shape");
    if n * q <= DENSE_LIMIT {
        solve_dense(w, r, rhs)
    } else {
        solve_bicgstab(w, r, rhs)
    }
}

fn solve_dense<W: NeighborOperator + ?Sized>(
    w: &W,
    r: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LinalgError> {
    let (n, q) = (w.dim(), r.nrows());
    // block (a, b) of I − Rᵀ⊗W is δ_ab I − R[b, a] W
    let mut dense_w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            dense_w[(i, j)] = w.entry(i, j);
        }
    }
    let mut a = DMatrix::zeros(n * q, n * q);
    for bi in 0..q {
        for bj in 0..q {
            let coef = r[(bj, bi)];
            if coef != 0.0 {
                let mut block = a.view_mut((bi * n, bj * n), (n, n));
                block -= &dense_w * coef;
            }
        }
        for i in 0..n {
            a[(bi * n + i, bi * n + i)] += 1.0;
        }
    }
    let lu = a.lu();
    let u = lu.u();
    let diag = u.diagonal().abs();
    let (lo, hi) = (diag.min(), diag.max());
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(ratio > PIVOT_RATIO) {
        return Err(LinalgError::Singular { ratio });
    }
    let b = DMatrix::from_column_slice(n * q, 1, rhs.as_slice());
    let x = lu.solve(&b).ok_or(LinalgError::Singular { ratio })?;
    Ok(DMatrix::from_column_slice(n, q, x.as_slice()))
}

fn solve_bicgstab<W: NeighborOperator + ?Sized>(
    w: &W,
    r: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LinalgError> {
    let op = |y: &DMatrix<f64>| y - w.apply(y) * r;
    let dot = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.dot(b);
    let bnorm = rhs.norm();
    if bnorm == 0.0 {
        return Ok(DMatrix::zeros(rhs.nrows(), rhs.ncols()));
    }
    let mut x = rhs.clone();
    let mut res = rhs - op(&x);
    let r0 = res.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    let mut p = v.clone();
    for it in 0..ITER_MAX {
        let rel = res.norm() / bnorm;
        if rel <= ITER_TOL {
            return Ok(x);
        }
        let rho_new = dot(&r0, &res);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(LinalgError::NoConvergence {
                iterations: it,
                residual: rel,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p = &res + (&p - &v * omega) * beta;
        v = op(&p);
        alpha = rho / dot(&r0, &v);
        let s = &res - &v * alpha;
        if s.norm() / bnorm <= ITER_TOL {
            x += &p * alpha;
            return Ok(x);
        }
        let t = op(&s);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        x += &p * alpha + &s * omega;
        res = &s - &t * omega;
    }
    Err(LinalgError::NoConvergence {
        iterations: ITER_MAX,
        residual: res.norm() / bnorm,
    })
}

/// Largest eigenvalue of a small symmetric matrix.
pub fn max_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}
