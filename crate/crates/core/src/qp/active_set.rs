//! Dual active-set method for strictly convex QPs (Goldfarb–Idnani family).
//!
//! Starts from the unconstrained minimizer and adds violated constraints one
//! at a time, dropping working-set members whose multipliers would turn
//! negative. The factorization `J' N = [R; 0]` with `J = L^{-T}` (`H = L L'`)
//! is updated with Givens rotations, so each working-set change costs
//! `O(n^2)`. Internally constraints are kept in `n_i' x >= c_i` form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{kkt_residuals, QpData, QpProblem, QpSolution, QpStatus, SolverOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ActiveSetSolver {
    options: SolverOptions,
}

enum AddOutcome {
    Added,
    Redundant,
    Infeasible(DVector<f64>),
    MaxIterations,
}

struct Workspace<'a> {
    n: usize,
    me: usize,
    /// Scaled, row-normalized constraint normals (`>=` form), equalities first.
    normals: &'a DMatrix<f64>,
    /// `-1` for equality rows entered with flipped orientation.
    sign: Vec<f64>,
    rhs: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    x: DVector<f64>,
    active: Vec<usize>,
    /// `in_active[i]` iff row `i` is in `active`.
    in_active: Vec<bool>,
    u: Vec<f64>,
    iterations: usize,
    max_iter: usize,
}

/// Everything that depends only on `H`, `L` and the equality matrix, so a
/// sequence of problems sharing them (different `f`, `W`, `e`) is factored
/// once.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    me: usize,
    mi: usize,
    scale: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `L^{-T}` of the scaled Hessian.
    j: DMatrix<f64>,
    normals: DMatrix<f64>,
    /// Row norms before normalization; zero marks an empty row.
    rho: Vec<f64>,
}

impl Factorization {
    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> (usize, usize) {
        (self.mi, self.me)
    }
}

impl ActiveSetSolver {
    pub fn new(options: SolverOptions) -> Self {
        ActiveSetSolver { options }
    }

    pub fn solve(&self, problem: &QpProblem) -> Result<QpSolution> {
        problem.validate()?;
        let fac = self.factor(&problem.h, &problem.l, problem.eq.as_ref().map(|(a, _)| a))?;
        self.solve_factored(&fac, problem.data())
    }

    /// Scales and factors `H` and normalizes the rows of `L` and `eq`.
    pub fn factor(&self, h: &DMatrix<f64>, l: &DMatrix<f64>, eq: Option<&DMatrix<f64>>) -> Result<Factorization> {
        let n = h.nrows();
        let mi = l.nrows();
        let me = eq.map_or(0, |a| a.nrows());
        let m = me + mi;

        let scale = if self.options.scale {
            let mut d = DVector::zeros(n);
            for i in 0..n {
                let hii = h[(i, i)];
                if !(hii > 0.0) {
                    return Err(Error::NotPositiveDefinite { context: "qp hessian diagonal" });
                }
                d[i] = 1.0 / hii.sqrt();
            }
            d
        } else {
            DVector::from_element(n, 1.0)
        };

        let mut hs = h.clone();
        for jcol in 0..n {
            for i in 0..n {
                hs[(i, jcol)] *= scale[i] * scale[jcol];
            }
        }
        let chol = hs
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { context: "qp hessian" })?;
        let j = chol
            .l()
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::NotPositiveDefinite { context: "qp hessian factor" })?;

        // Row i of the working matrix: equalities 0..me, inequalities me..m.
        // Columns are scaled in place, then rows normalized.
        let mut normals = DMatrix::zeros(m, n);
        if let Some(a) = eq {
            normals.view_mut((0, 0), (me, n)).copy_from(a);
        }
        if mi > 0 {
            normals.view_mut((me, 0), (mi, n)).copy_from(&(-l));
        }
        for (mut col, d) in normals.column_iter_mut().zip(scale.iter()) {
            col *= *d;
        }
        let mut rho = vec![0.0; m];
        for (i, r) in rho.iter_mut().enumerate() {
            *r = normals.row(i).norm();
        }
        for mut col in normals.column_iter_mut() {
            for (v, r) in col.iter_mut().zip(&rho) {
                if *r > 0.0 {
                    *v /= r;
                }
            }
        }
        Ok(Factorization {
            n,
            me,
            mi,
            scale,
            chol,
            j,
            normals,
            rho,
        })
    }

    /// Solves a problem whose `H`, `L` and equality matrix were passed to
    /// [`ActiveSetSolver::factor`] to produce `fac`.
    pub fn solve_factored(&self, fac: &Factorization, problem: QpData<'_>) -> Result<QpSolution> {
        let (n, me, mi) = (fac.n, fac.me, fac.mi);
        let m = me + mi;
        let b = problem.eq.map(|(_, b)| b);
        for (ctx, expected, got) in [
            ("factored qp variables", n, problem.f.len()),
            ("factored qp inequality rows", mi, problem.w.len()),
            ("factored qp equality rows", me, b.map_or(0, |b| b.len())),
        ] {
            if expected != got {
                return Err(Error::Dimension { context: ctx, expected, got });
            }
        }
        let tol = self.options.tol;
        let rho = &fac.rho;

        let mut rhs = DVector::zeros(m);
        if let Some(b) = b {
            for k in 0..me {
                if rho[k] == 0.0 {
                    if b[k].abs() > tol * (1.0 + b.amax()) {
                        let mut cert_eq = DVector::zeros(me);
                        cert_eq[k] = -b[k].signum();
                        return Ok(infeasible(problem, Some(DVector::zeros(mi)), Some(cert_eq)));
                    }
                    continue;
                }
                rhs[k] = b[k] / rho[k];
            }
        }
        for k in 0..mi {
            let idx = me + k;
            if rho[idx] == 0.0 {
                if problem.w[k] < 0.0 {
                    let mut cert = DVector::zeros(mi);
                    cert[k] = 1.0;
                    return Ok(infeasible(problem, Some(cert), None));
                }
                continue;
            }
            rhs[idx] = -problem.w[k] / rho[idx];
        }

        let fs = problem.f.component_mul(&fac.scale);
        let max_iter = self.options.max_iter.unwrap_or(3 * (n + m) + 50);
        let mut ws = Workspace {
            n,
            me,
            normals: &fac.normals,
            sign: vec![1.0; m],
            rhs,
            j: fac.j.clone(),
            r: DMatrix::zeros(n, n),
            x: -fac.chol.solve(&fs),
            active: Vec::new(),
            in_active: vec![false; m],
            u: Vec::new(),
            iterations: 0,
            max_iter,
        };

        for p in 0..me {
            if rho[p] == 0.0 {
                continue;
            }
            let mut sp = ws.slack(p);
            if sp > 0.0 {
                ws.sign[p] = -1.0;
                ws.rhs[p] = -ws.rhs[p];
                sp = -sp;
            }
            let eq_tol = tol * (1.0 + ws.rhs[p].abs());
            match ws.add(p, sp, Some(eq_tol)) {
                AddOutcome::Added | AddOutcome::Redundant => {}
                AddOutcome::Infeasible(y) => {
                    let (ci, ce) = certificate(&y, me, mi, rho, &ws.sign);
                    return Ok(infeasible(problem, Some(ci), Some(ce)));
                }
                AddOutcome::MaxIterations => return Ok(finish(problem, &ws, fac, QpStatus::MaxIterations)),
            }
        }

        loop {
            let slacks = ws.normals * &ws.x - &ws.rhs;
            let mut worst: Option<(usize, f64)> = None;
            for idx in me..m {
                if rho[idx] == 0.0 || ws.in_active[idx] {
                    continue;
                }
                let s = slacks[idx];
                if s < -tol * (1.0 + ws.rhs[idx].abs()) && worst.is_none_or(|(_, w)| s < w) {
                    worst = Some((idx, s));
                }
            }
            let Some((p, sp)) = worst else {
                return Ok(finish(problem, &ws, fac, QpStatus::Optimal));
            };
            match ws.add(p, sp, None) {
                AddOutcome::Added | AddOutcome::Redundant => {}
                AddOutcome::Infeasible(y) => {
                    let (ci, ce) = certificate(&y, me, mi, rho, &ws.sign);
                    return Ok(infeasible(problem, Some(ci), Some(ce)));
                }
                AddOutcome::MaxIterations => return Ok(finish(problem, &ws, fac, QpStatus::MaxIterations)),
            }
        }
    }
}

fn finish(problem: QpData<'_>, ws: &Workspace<'_>, fac: &Factorization, status: QpStatus) -> QpSolution {
    let me = ws.me;
    let u = ws.x.component_mul(&fac.scale);
    let mut lambda = DVector::zeros(fac.mi);
    let mut mu = DVector::zeros(me);
    let mut active = Vec::new();
    for (&idx, &mult) in ws.active.iter().zip(ws.u.iter()) {
        if idx < me {
            mu[idx] = -ws.sign[idx] * mult / fac.rho[idx];
        } else {
            lambda[idx - me] = mult / fac.rho[idx];
            active.push(idx - me);
        }
    }
    active.sort_unstable();
    let kkt = kkt_residuals(problem, &u, &lambda, &mu);
    let objective = problem.objective(&u);
    QpSolution {
        u,
        lambda,
        mu,
        status,
        kkt,
        iterations: ws.iterations,
        active,
        certificate: None,
        certificate_eq: None,
        objective,
    }
}

fn infeasible(problem: QpData<'_>, cert: Option<DVector<f64>>, cert_eq: Option<DVector<f64>>) -> QpSolution {
    let n = problem.f.len();
    QpSolution {
        u: DVector::from_element(n, f64::NAN),
        lambda: DVector::zeros(problem.w.len()),
        mu: DVector::zeros(problem.eq.map_or(0, |(_, b)| b.len())),
        status: QpStatus::Infeasible,
        kkt: Default::default(),
        iterations: 0,
        active: Vec::new(),
        certificate: cert,
        certificate_eq: cert_eq,
        objective: f64::NAN,
    }
}

/// Maps `>=`-form Farkas weights back to the caller's rows.
fn certificate(
    y: &DVector<f64>,
    me: usize,
    mi: usize,
    rho: &[f64],
    sign: &[f64],
) -> (DVector<f64>, DVector<f64>) {
    let mut ci = DVector::zeros(mi);
    let mut ce = DVector::zeros(me);
    for (idx, &val) in y.iter().enumerate() {
        if val == 0.0 {
            continue;
        }
        if idx < me {
            ce[idx] = -sign[idx] * val / rho[idx];
        } else {
            ci[idx - me] = val.max(0.0) / rho[idx];
        }
    }
    (ci, ce)
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / r, b / r, r)
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, c0: usize, c1: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, c0)];
        let b = m[(i, c1)];
        m[(i, c0)] = c * a + s * b;
        m[(i, c1)] = -s * a + c * b;
    }
}

impl Workspace<'_> {
    fn slack(&self, p: usize) -> f64 {
        self.sign[p] * self.normals.row(p).transpose().dot(&self.x) - self.rhs[p]
    }

    /// Brings constraint `p` (current slack `sp < 0`, or any sign for an
    /// equality) into the working set. `eq_tol` marks equality constraints.
    fn add(&mut self, p: usize, mut sp: f64, eq_tol: Option<f64>) -> AddOutcome {
        let n = self.n;
        let np = self.normals.row(p).transpose() * self.sign[p];
        let mut up = 0.0;
        loop {
            if self.iterations >= self.max_iter {
                return AddOutcome::MaxIterations;
            }
            let q = self.active.len();
            let d = self.j.tr_mul(&np);
            let d2 = d.rows(q, n - q);
            let d2_norm2 = d2.norm_squared();
            let z_zero = d2_norm2 <= 1e-24 * d.norm_squared().max(1e-300);

            // r = R^{-1} d[0..q]
            let mut r = DVector::zeros(q);
            for i in (0..q).rev() {
                let mut acc = d[i];
                for k in i + 1..q {
                    acc -= self.r[(i, k)] * r[k];
                }
                r[i] = acc / self.r[(i, i)];
            }
            let rmax = r.amax();

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in 0..q {
                if self.active[k] < self.me {
                    continue;
                }
                if r[k] > 1e-13 * (1.0 + rmax) {
                    let ratio = self.u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let t2 = if z_zero { f64::INFINITY } else { -sp / d2_norm2 };

            if z_zero {
                if let Some(tol) = eq_tol {
                    if sp.abs() <= tol && t1.is_infinite() {
                        return AddOutcome::Redundant;
                    }
                }
                if t1.is_infinite() {
                    let mut y = DVector::zeros(self.normals.nrows());
                    y[p] = 1.0;
                    for k in 0..q {
                        y[self.active[k]] = -r[k];
                    }
                    return AddOutcome::Infeasible(y);
                }
                for k in 0..q {
                    self.u[k] -= t1 * r[k];
                }
                up += t1;
                self.drop(drop_at.unwrap());
                self.iterations += 1;
                continue;
            }

            let t = t1.min(t2);
            let z = self.j.columns(q, n - q) * d2;
            self.x.axpy(t, &z, 1.0);
            sp += t * d2_norm2;
            for k in 0..q {
                self.u[k] -= t * r[k];
            }
            up += t;
            self.iterations += 1;

            if t2 <= t1 {
                self.push(p, up, d);
                return AddOutcome::Added;
            }
            self.drop(drop_at.unwrap());
        }
    }

    fn push(&mut self, p: usize, up: f64, mut d: DVector<f64>) {
        let n = self.n;
        let q = self.active.len();
        for jj in (q + 1..n).rev() {
            let (c, s, rr) = givens(d[jj - 1], d[jj]);
            if s == 0.0 {
                continue;
            }
            d[jj - 1] = rr;
            d[jj] = 0.0;
            rotate_columns(&mut self.j, jj - 1, jj, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.active.push(p);
        self.in_active[p] = true;
        self.u.push(up);
    }

    fn drop(&mut self, k: usize) {
        let q = self.active.len();
        let idx = self.active.remove(k);
        self.in_active[idx] = false;
        self.u.remove(k);
        for col in k..q - 1 {
            for row in 0..=col + 1 {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for col in k..q - 1 {
            let (c, s, rr) = givens(self.r[(col, col)], self.r[(col + 1, col)]);
            self.r[(col, col)] = rr;
            self.r[(col + 1, col)] = 0.0;
            for cc in col + 1..q - 1 {
                let a = self.r[(col, cc)];
                let b = self.r[(col + 1, cc)];
                self.r[(col, cc)] = c * a + s * b;
                self.r[(col + 1, cc)] = -s * a + c * b;
            }
            rotate_columns(&mut self.j, col, col + 1, c, s);
        }
    }
}
