use nalgebra::{Cholesky, DMatrix, Dyn};

use super::EstimatorError;

/// Smallest admissible squared-pivot ratio for an unpenalised (λ = 0) solve.
const RANK_TOL: f64 = 1e-13;

/// Gram data for a shifted-signature design `S` (`n × s`); the intercept
/// column is implicit and unpenalised.
///
/// When `1 + s ≤ n` the primal normal matrix `S̃ᵀS̃` is kept. Otherwise the
/// centred kernel `S_c S_cᵀ` is kept and the ridge problem is solved in its
/// dual form, which gives the same coefficients.
#[derive(Debug, Clone)]
pub struct RidgeDesign {
    sig: DMatrix<f64>,
    col_means: DMatrix<f64>,
    primal_gram: Option<DMatrix<f64>>,
    dual_kernel: Option<DMatrix<f64>>,
}

impl RidgeDesign {
    pub fn new(sig: DMatrix<f64>) -> Self {
        let (n, s) = sig.shape();
        let col_means = DMatrix::from_fn(1, s, |_, j| sig.column(j).mean());
        let (primal_gram, dual_kernel) = if s < n {
            let tilde = crate::signature::with_unit_column(&sig);
            (Some(tilde.tr_mul(&tilde)), None)
        } else {
            let centered = centered(&sig, &col_means);
            (None, Some(&centered * centered.transpose()))
        };
        Self {
            sig,
            col_means,
            primal_gram,
            dual_kernel,
        }
    }

    pub fn n(&self) -> usize {
        self.sig.nrows()
    }

    /// Number of shifted-signature columns.
    pub fn dim(&self) -> usize {
        self.sig.ncols()
    }

    pub fn sig(&self) -> &DMatrix<f64> {
        &self.sig
    }

    pub fn uses_dual(&self) -> bool {
        self.dual_kernel.is_some()
    }

    pub fn solver(&self, lambda: f64) -> Result<RidgeSolver<'_>, EstimatorError> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(EstimatorError::InvalidLambda(lambda));
        }
        let n = self.n() as f64;
        let singular = || EstimatorError::Singular {
            dim: self.dim() + 1,
            lambda,
        };
        if let Some(gram) = &self.primal_gram {
            let mut a = gram.clone();
            for j in 1..a.ncols() {
                a[(j, j)] += n * lambda;
            }
            let chol = Cholesky::new(a).ok_or_else(singular)?;
            if lambda == 0.0 {
                let d = chol.l_dirty().diagonal();
                let (lo, hi) = (d.min(), d.max());
                if !(lo * lo > RANK_TOL * hi * hi) {
                    return Err(singular());
                }
            }
            Ok(RidgeSolver {
                design: self,
                lambda,
                factor: Factor::Primal(chol),
            })
        } else {
            if lambda == 0.0 {
                return Err(singular());
            }
            let mut k = self.dual_kernel.clone().expect("dual kernel present");
            for i in 0..k.nrows() {
                k[(i, i)] += n * lambda;
            }
            let chol = Cholesky::new(k).ok_or_else(singular)?;
            Ok(RidgeSolver {
                design: self,
                lambda,
                factor: Factor::Dual(chol),
            })
        }
    }
}

fn centered(m: &DMatrix<f64>, means: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[(0, j)]);
    }
    c
}

#[derive(Debug, Clone)]
enum Factor {
    Primal(Cholesky<f64, Dyn>),
    Dual(Cholesky<f64, Dyn>),
}

/// A factorised `(S̃ᵀS̃ + nΛ)` for one ridge level.
#[derive(Debug, Clone)]
pub struct RidgeSolver<'a> {
    design: &'a RidgeDesign,
    lambda: f64,
    factor: Factor,
}

impl RidgeSolver<'_> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn design(&self) -> &RidgeDesign {
        self.design
    }

    /// `(S̃ᵀS̃ + nΛ)⁻¹ S̃ᵀ B`, split into the intercept row and the rest.
    pub fn coefficients(&self, b: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let sig = &self.design.sig;
        let (n, s) = sig.shape();
        match &self.factor {
            Factor::Primal(chol) => {
                let mut rhs = DMatrix::zeros(s + 1, b.ncols());
                for c in 0..b.ncols() {
                    rhs[(0, c)] = b.column(c).sum();
                }
                rhs.rows_mut(1, s).copy_from(&sig.tr_mul(b));
                let x = chol.solve(&rhs);
                (x.rows(0, 1).into_owned(), x.rows(1, s).into_owned())
            }
            Factor::Dual(chol) => {
                let b_means = DMatrix::from_fn(1, b.ncols(), |_, j| b.column(j).mean());
                let alpha = chol.solve(&centered(b, &b_means));
                let sc = centered(sig, &self.design.col_means);
                let beta = sc.tr_mul(&alpha);
                let mu = b_means - &self.design.col_means * &beta;
                debug_assert_eq!(beta.nrows(), s);
                debug_assert_eq!(alpha.nrows(), n);
                (mu, beta)
            }
        }
    }

    /// `B − 1μ − Sβ` at the ridge coefficients of `B`, i.e. `(I − P)B`.
    pub fn residualize(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Factor::Primal(_) => {
                let (mu, beta) = self.coefficients(b);
                residual(b, &self.design.sig, &mu, &beta)
            }
            Factor::Dual(chol) => {
                let b_means = DMatrix::from_fn(1, b.ncols(), |_, j| b.column(j).mean());
                let alpha = chol.solve(&centered(b, &b_means));
                alpha * (self.design.n() as f64 * self.lambda)
            }
        }
    }
}

/// `B − 1μ − Sβ`.
pub fn residual(
    b: &DMatrix<f64>,
    sig: &DMatrix<f64>,
    mu: &DMatrix<f64>,
    beta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut r = b - sig * beta;
    for (j, mut col) in r.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[(0, j)]);
    }
    r
}
