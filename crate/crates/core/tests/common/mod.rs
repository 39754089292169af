#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use perimeter::linear::LinearModel;
use perimeter::plant::Gate;
use perimeter::qp::QpProblem;
use rand::Rng;

/// Exhaustive active-set oracle for small strictly convex QPs with
/// inequalities only. Every subset of at most `n` rows is tried as the active
/// set; the KKT system is solved directly and the point kept if it is primal
/// feasible with nonnegative multipliers. Returns `None` when no subset
/// certifies optimality (the problem is then infeasible).
pub fn brute_force_qp(p: &QpProblem, tol: f64) -> Option<(DVector<f64>, f64)> {
    let n = p.num_vars();
    let m = p.num_ineq();
    assert!(m <= 16, "oracle is exponential in the row count");
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if rows.len() > n {
            continue;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        for i in 0..n {
            rhs[i] = -p.f[i];
        }
        for (j, &r) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + j, c)] = p.l[(r, c)];
                kkt[(c, n + j)] = p.l[(r, c)];
            }
            rhs[n + j] = p.w[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let u = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, k);
        let scale = 1.0 + p.w.amax();
        let feasible = (&p.l * &u - &p.w).iter().all(|s| *s <= tol * scale);
        let dual_ok = lam.iter().all(|l| *l >= -tol * (1.0 + p.f.amax()));
        if feasible && dual_ok && sol.iter().all(|v| v.is_finite()) {
            let obj = p.objective(&u);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                best = Some((u, obj));
            }
        }
    }
    best
}

/// Random strictly convex QP with `n` variables and `m` inequalities, feasible
/// by construction (rows are satisfied at a random interior point).
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> QpProblem {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = a.transpose() * &a + DMatrix::identity(n, n) * rng.random_range(0.1..1.0);
    let h = (&h + h.transpose()) * 0.5;
    let f = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let l = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
    let w = &l * &x0 + slack;
    QpProblem::new(h, f, l, w)
}

/// Random gate with consistent greens and flows.
pub fn random_gate<R: Rng>(rng: &mut R, id: usize, max_delay: usize) -> Gate {
    let storage = rng.random_range(50.0..600.0);
    let lanes = rng.random_range(1..=4) as f64;
    let cycle = if rng.random_bool(0.5) { 60.0 } else { 90.0 };
    let g_min = rng.random_range(0.1..0.25) * cycle;
    let g_max = rng.random_range(0.6..0.9) * cycle;
    let g_nom = rng.random_range(g_min + 1.0..g_max - 1.0);
    let delay = rng.random_range(0..=max_delay);
    Gate::from_greens(id, storage, 1800.0 * lanes, cycle, [g_min, g_nom, g_max], delay).unwrap()
}

pub fn random_gates<R: Rng>(rng: &mut R, count: usize, max_delay: usize) -> Vec<Gate> {
    (1..=count).map(|id| random_gate(rng, id, max_delay)).collect()
}

pub fn random_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

/// Step-by-step integration of the deviation model, stacked like `Phi`.
pub fn rollout(model: &LinearModel, dx0: &DVector<f64>, du: &DVector<f64>, dd: &DVector<f64>, horizon: usize) -> DVector<f64> {
    let (nx, nu, nd) = (model.num_states(), model.num_inputs(), model.num_disturbances());
    let mut x = dx0.clone();
    let mut out = DVector::zeros(horizon * nx);
    for k in 0..horizon {
        let u = du.rows(k * nu, nu).into_owned();
        let d = dd.rows(k * nd, nd).into_owned();
        x = model.step(&x, &u, &d);
        out.rows_mut(k * nx, nx).copy_from(&x);
    }
    out
}

/// Direct recursion with delayed inputs: `n(k+1) = a n(k) + T sum_o u_o(k -
/// kappa_o) + T d_n(k)`, `l_o(k+1) = l_o(k) - T u_o(k) + T d_o(k)`, inputs
/// before time zero equal to zero. Returns `[n, l_1..l_G]` per step.
pub fn delayed_recursion(
    a_nn: f64,
    period: f64,
    delays: &[usize],
    n0: f64,
    l0: &[f64],
    inputs: &[Vec<f64>],
    disturbances: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let g = delays.len();
    let mut n = n0;
    let mut l = l0.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let arriving: f64 = (0..g)
            .map(|o| if k >= delays[o] { inputs[k - delays[o]][o] } else { 0.0 })
            .sum();
        let next_n = a_nn * n + period * arriving + period * disturbances[k][0];
        for o in 0..g {
            l[o] += -period * inputs[k][o] + period * disturbances[k][o + 1];
        }
        n = next_n;
        let mut row = vec![n];
        row.extend_from_slice(&l);
        out.push(row);
    }
    out
}

/// `max |a - b| / max(1, max |b|)`.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}
