//! Dense strictly convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 u' H u + f' u
//!     subject to  L u <= W
//!                 E u  = e      (optional)
//! ```
//!
//! with `H` symmetric positive definite. [`solve`] returns the minimizer
//! together with multipliers and KKT residuals; callers should judge a result
//! by [`QpSolution::status`] and the residuals rather than by the algorithm.

mod active_set;
pub mod io;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use active_set::{ActiveSetSolver, Factorization};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub l: DMatrix<f64>,
    pub w: DVector<f64>,
    pub eq: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, l: DMatrix<f64>, w: DVector<f64>) -> Self {
        QpProblem { h, f, l, w, eq: None }
    }

    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        QpProblem::new(h, f, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq = Some((a, b));
        self
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.w.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |(_, b)| b.len())
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        self.data().objective(u)
    }

    pub fn data(&self) -> QpData<'_> {
        QpData {
            h: &self.h,
            f: &self.f,
            l: &self.l,
            w: &self.w,
            eq: self.eq.as_ref().map(|(a, b)| (a, b)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.f.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::Dimension {
                context: "qp hessian",
                expected: n,
                got: self.h.nrows(),
            });
        }
        if self.l.ncols() != n && self.l.nrows() > 0 {
            return Err(Error::Dimension {
                context: "qp inequality matrix columns",
                expected: n,
                got: self.l.ncols(),
            });
        }
        if self.l.nrows() != self.w.len() {
            return Err(Error::Dimension {
                context: "qp inequality rows",
                expected: self.l.nrows(),
                got: self.w.len(),
            });
        }
        if let Some((a, b)) = &self.eq {
            if a.nrows() != b.len() || (a.nrows() > 0 && a.ncols() != n) {
                return Err(Error::Dimension {
                    context: "qp equality system",
                    expected: n,
                    got: a.ncols(),
                });
            }
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * (1.0 + self.h.amax()) {
            return Err(Error::NotPositiveDefinite {
                context: "hessian is not symmetric",
            });
        }
        Ok(())
    }
}

/// Borrowed view of a problem, so repeated solves can share `H` and `L`.
#[derive(Debug, Clone, Copy)]
pub struct QpData<'a> {
    pub h: &'a DMatrix<f64>,
    pub f: &'a DVector<f64>,
    pub l: &'a DMatrix<f64>,
    pub w: &'a DVector<f64>,
    pub eq: Option<(&'a DMatrix<f64>, &'a DVector<f64>)>,
}

impl QpData<'_> {
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(self.h * u)) + self.f.dot(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max-iterations",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    /// `||H u + f + L' lambda + E' mu||_inf`
    pub stationarity: f64,
    /// Largest violation of `L u <= W` or `E u = e`.
    pub primal: f64,
    /// `max_i |lambda_i (L u - W)_i|`
    pub complementarity: f64,
    /// Most negative inequality multiplier (0 when all are nonnegative).
    pub dual: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// Indices of inequality rows in the final working set.
    pub active: Vec<usize>,
    /// For infeasible problems: `y >= 0` with `L' y ~ 0` and `W' y < 0`
    /// (equality rows, if any, carry free-sign weights in `certificate_eq`).
    pub certificate: Option<DVector<f64>>,
    pub certificate_eq: Option<DVector<f64>>,
    pub objective: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// Checks the optimality certificate at tolerance `tol`.
    pub fn kkt_satisfied(&self, problem: &QpProblem, tol: f64) -> bool {
        let fscale = 1.0 + problem.f.amax();
        let wscale = 1.0 + problem.w.amax().max(problem.eq.as_ref().map_or(0.0, |(_, b)| b.amax()));
        self.kkt.stationarity <= tol * fscale
            && self.kkt.primal <= tol * wscale
            && self.kkt.complementarity <= tol * wscale * (1.0 + self.lambda.amax())
            && self.kkt.dual >= -tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative tolerance on feasibility and the KKT certificate.
    pub tol: f64,
    /// Working-set changes allowed before giving up; `None` picks a bound
    /// from the problem size.
    pub max_iter: Option<usize>,
    /// Rescale variables by `diag(H)^{-1/2}` and rows of `L` to unit norm.
    pub scale: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: None,
            scale: true,
        }
    }
}

/// `u* = -H^{-1} f` through a Cholesky factorization.
pub fn solve_unconstrained(h: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    if h.nrows() != f.len() || h.ncols() != f.len() {
        return Err(Error::Dimension {
            context: "unconstrained solve",
            expected: f.len(),
            got: h.nrows(),
        });
    }
    let chol = h
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { context: "unconstrained hessian" })?;
    let u = -chol.solve(f);
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { context: "unconstrained hessian is singular" });
    }
    Ok(u)
}

/// Solves `problem` with the default dual active-set method.
pub fn solve(problem: &QpProblem, options: &SolverOptions) -> Result<QpSolution> {
    let solution = ActiveSetSolver::new(*options).solve(problem)?;
    if solution.is_optimal() {
        debug_assert!(
            solution.kkt_satisfied(problem, options.tol.max(1e-7)),
            "KKT certificate failed: {:?}",
            solution.kkt
        );
    }
    Ok(solution)
}

pub(crate) fn kkt_residuals(
    problem: QpData<'_>,
    u: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> KktResiduals {
    let mut grad = problem.h * u + problem.f;
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    if !problem.w.is_empty() {
        grad += problem.l.tr_mul(lambda);
        let slack = problem.l * u - problem.w;
        for (s, lam) in slack.iter().zip(lambda.iter()) {
            primal = primal.max(*s);
            complementarity = complementarity.max((lam * s).abs());
        }
    }
    if let Some((a, b)) = problem.eq {
        if b.len() > 0 {
            grad += a.tr_mul(mu);
            let r = a * u - b;
            primal = primal.max(r.amax());
        }
    }
    let dual = lambda.iter().fold(0.0_f64, |acc, &v| acc.min(v));
    KktResiduals {
        stationarity: grad.amax(),
        primal,
        complementarity,
        dual,
    }
}
