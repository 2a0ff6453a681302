//! Box-constrained quadratic for the spatial matrix:
//! minimise `(1/n)(‖A‖² − 2 tr(RᵀC) + tr(RᵀGR))` over `[−1, 1]^{Q×Q}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::max_symmetric_eigenvalue;

pub const PG_TOL: f64 = 1e-10;
pub const PG_MAX_ITER: usize = 10_000;
const POLISH_EVERY: usize = 20;
const BOUND_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RMode {
    #[default]
    Columnwise,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLsOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: RMode,
    /// Exact solves on the current free set between gradient steps.
    pub polish: bool,
}

impl Default for BoxLsOptions {
    fn default() -> Self {
        Self {
            tol: PG_TOL,
            max_iter: PG_MAX_ITER,
            mode: RMode::Columnwise,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxLsResult {
    pub r: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub pg_norm: f64,
}

fn project(x: &mut DMatrix<f64>) {
    x.apply(|v| *v = v.clamp(-1.0, 1.0));
}

/// Quadratic part `tr(RᵀGR) − 2 tr(RᵀC)` of the objective, without the `1/n`.
pub fn quadratic_value(g: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    (r.tr_mul(&(g * r))).trace() - 2.0 * r.dot(c)
}

fn gradient(g: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>, n: f64) -> DMatrix<f64> {
    (g * r - c) * (2.0 / n)
}

/// `L̄ ‖R − Π(R − ∇f/L̄)‖`.
pub fn gradient_mapping_norm(
    g: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: f64,
    lip: f64,
) -> f64 {
    if lip <= 0.0 {
        return 0.0;
    }
    let grad = gradient(g, c, r, n);
    let mut stepped = r - grad / lip;
    project(&mut stepped);
    (r - stepped).norm() * lip
}

/// Solves the box problem. `g` is `BᵀB`, `c` is `BᵀA` and `n` the sample size.
pub fn solve_box_ls(
    g: &DMatrix<f64>,
    c: &DMatrix<f64>,
    n: usize,
    opts: &BoxLsOptions,
) -> BoxLsResult {
    let q = g.nrows();
    let nf = n as f64;
    let lmax = max_symmetric_eigenvalue(g);
    if !(lmax > f64::MIN_POSITIVE) {
        // flat objective: zero matrix by convention
        return BoxLsResult {
            r: DMatrix::zeros(q, c.ncols()),
            iterations: 0,
            converged: true,
            pg_norm: 0.0,
        };
    }
    let lip = 2.0 * lmax / nf;
    match opts.mode {
        RMode::Joint => run(g, c, nf, lip, opts, opts.tol),
        RMode::Columnwise => {
            let cols = c.ncols();
            let col_tol = opts.tol / (cols as f64).sqrt();
            let mut r = DMatrix::zeros(q, cols);
            let mut iterations = 0;
            let mut converged = true;
            for j in 0..cols {
                let cj = c.columns(j, 1).into_owned();
                let res = run(g, &cj, nf, lip, opts, col_tol);
                r.set_column(j, &res.r.column(0));
                iterations = iterations.max(res.iterations);
                converged &= res.converged;
            }
            let pg_norm = gradient_mapping_norm(g, c, &r, nf, lip);
            BoxLsResult {
                r,
                iterations,
                converged: converged && pg_norm <= opts.tol,
                pg_norm,
            }
        }
    }
}

fn run(
    g: &DMatrix<f64>,
    c: &DMatrix<f64>,
    n: f64,
    lip: f64,
    opts: &BoxLsOptions,
    tol: f64,
) -> BoxLsResult {
    let mut r = DMatrix::zeros(g.nrows(), c.ncols());
    let mut pg = gradient_mapping_norm(g, c, &r, n, lip);
    let mut it = 0;
    while pg > tol && it < opts.max_iter {
        it += 1;
        let grad = gradient(g, c, &r, n);
        r -= grad / lip;
        project(&mut r);
        if opts.polish && (it == 1 || it % POLISH_EVERY == 0) {
            polish(g, c, &mut r, n);
        }
        pg = gradient_mapping_norm(g, c, &r, n, lip);
    }
    BoxLsResult {
        r,
        iterations: it,
        converged: pg <= tol,
        pg_norm: pg,
    }
}

/// Replaces each column by the exact minimiser on its current free set when
/// that point is feasible and no worse.
fn polish(g: &DMatrix<f64>, c: &DMatrix<f64>, r: &mut DMatrix<f64>, n: f64) {
    let grad = gradient(g, c, r, n);
    for j in 0..r.ncols() {
        let col = r.column(j).into_owned();
        let gj = grad.column(j);
        let free: Vec<usize> = (0..col.len())
            .filter(|&i| {
                let at_upper = col[i] >= 1.0 - BOUND_EPS && gj[i] < 0.0;
                let at_lower = col[i] <= -1.0 + BOUND_EPS && gj[i] > 0.0;
                !(at_upper || at_lower)
            })
            .collect();
        if free.is_empty() {
            continue;
        }
        let fixed: Vec<usize> = (0..col.len()).filter(|i| !free.contains(i)).collect();
        let gff = g.select_rows(&free).select_columns(&free);
        let mut rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| c[(i, j)]));
        for (a, &i) in free.iter().enumerate() {
            for &k in &fixed {
                rhs[a] -= g[(i, k)] * col[k];
            }
        }
        let sol = match gff.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => match gff.svd(true, true).solve(&rhs, 1e-12 * g.amax()) {
                Ok(s) => s,
                Err(_) => continue,
            },
        };
        if sol.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            continue;
        }
        let mut cand = col.clone();
        for (a, &i) in free.iter().enumerate() {
            cand[i] = sol[a];
        }
        let cj = c.column(j).into_owned();
        let value = |x: &DVector<f64>| (x.transpose() * g * x)[(0, 0)] - 2.0 * x.dot(&cj);
        if value(&cand) <= value(&col) {
            r.set_column(j, &cand);
        }
    }
}
