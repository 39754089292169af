//! Discrete-time linear prediction model and its condensation over a horizon.
//!
//! Deviations from the set point obey
//!
//! ```text
//!     dx(k+1) = A dx(k) + B du(k) + C dd(k)
//! ```
//!
//! with state `[n, l_1..l_G, z...]` (delay-chain states `z` last), inputs the
//! gate flows and disturbances `[d_n, d_1..d_G]`. Stacking `N` steps gives
//! `dX = Phi dx0 + Gamma dU + Z dD`, and the quadratic cost becomes
//! `1/2 dU' H dU + dU' (F dx0 + G dD)` up to a constant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nfd::NfdParams;
use crate::plant::Gate;
use crate::qp::QpProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct SetPoint {
    /// Target accumulation `n_hat` (veh).
    pub n: f64,
    /// Target queues (veh).
    pub queues: Vec<f64>,
    /// Nominal gate flows `q_hat` (veh/h).
    pub flows: Vec<f64>,
    /// Nominal disturbances `[d_n, d_1..d_G]` (veh/h).
    pub disturbance: Vec<f64>,
}

impl SetPoint {
    /// `n_hat` with empty queues, nominal flows `q_nom` and gate demand equal
    /// to the nominal flows.
    pub fn nominal(n: f64, gates: &[Gate]) -> SetPoint {
        let flows: Vec<f64> = gates.iter().map(|g| g.q_nom).collect();
        let mut disturbance = vec![0.0];
        disturbance.extend_from_slice(&flows);
        SetPoint {
            n,
            queues: vec![0.0; gates.len()],
            flows,
            disturbance,
        }
    }

    pub fn validate(&self, nfd: &NfdParams, gates: &[Gate]) -> Result<()> {
        let g = gates.len();
        if self.queues.len() != g || self.flows.len() != g {
            return Err(Error::Dimension {
                context: "set point",
                expected: g,
                got: self.flows.len().min(self.queues.len()),
            });
        }
        if self.disturbance.len() != g + 1 {
            return Err(Error::Dimension {
                context: "set point disturbance",
                expected: g + 1,
                got: self.disturbance.len(),
            });
        }
        if !(self.n > 0.0 && self.n < nfd.n_max) {
            return Err(Error::invalid("set_point.n", format!("must lie in (0, {})", nfd.n_max)));
        }
        for ((gate, &l), &q) in gates.iter().zip(&self.queues).zip(&self.flows) {
            if !(0.0..=gate.storage).contains(&l) {
                return Err(Error::invalid(format!("set_point.queue[{}]", gate.id), "outside [0, storage]"));
            }
            if !(gate.q_min..=gate.q_max).contains(&q) {
                return Err(Error::invalid(format!("set_point.flow[{}]", gate.id), "outside [q_min, q_max]"));
            }
        }
        Ok(())
    }

    /// Drift of the nonlinear dynamics at the set point, per unit time
    /// (veh/h), in disturbance coordinates. Zero for an exact equilibrium.
    pub fn residual(&self, nfd: &NfdParams) -> Result<DVector<f64>> {
        let g = self.queues.len();
        let mut r = DVector::zeros(g + 1);
        r[0] = self.flows.iter().sum::<f64>() - nfd.capped_outflow(self.n)? + self.disturbance[0];
        for o in 0..g {
            r[o + 1] = self.disturbance[o + 1] - self.flows[o];
        }
        Ok(r)
    }
}

#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Sample period (h).
    pub period: f64,
    pub set_point: SetPoint,
    /// Per gate delay in periods; nonzero only after [`augment_delays`].
    pub delay_steps: Vec<usize>,
}

impl LinearModel {
    pub fn num_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn num_disturbances(&self) -> usize {
        self.c.ncols()
    }

    /// Accumulation and queues, i.e. every state outside the delay chains.
    pub fn num_physical(&self) -> usize {
        self.num_states() - self.delay_steps.iter().sum::<usize>()
    }

    /// Set-point value of every state, delay chains holding `q_hat`.
    pub fn state_set_point(&self) -> DVector<f64> {
        let sp = &self.set_point;
        let mut x = Vec::with_capacity(self.num_states());
        x.push(sp.n);
        x.extend_from_slice(&sp.queues);
        for (o, &k) in self.delay_steps.iter().enumerate() {
            x.extend(std::iter::repeat_n(sp.flows[o], k));
        }
        DVector::from_vec(x)
    }

    /// One step of the deviation model.
    pub fn step(&self, dx: &DVector<f64>, du: &DVector<f64>, dd: &DVector<f64>) -> DVector<f64> {
        &self.a * dx + &self.b * du + &self.c * dd
    }
}

/// Euler linearization around `set_point`. `slope_override` replaces the
/// fundamental-diagram slope at `n_hat` (1/h) when given.
pub fn linearize(
    nfd: &NfdParams,
    gates: &[Gate],
    set_point: &SetPoint,
    period: f64,
    slope_override: Option<f64>,
) -> Result<LinearModel> {
    set_point.validate(nfd, gates)?;
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::invalid("period", "must be positive"));
    }
    if nfd.cap_active(set_point.n)? {
        return Err(Error::invalid(
            "set_point.n",
            "lies on the exit cap where the output is not differentiable",
        ));
    }
    let slope = match slope_override {
        Some(s) => s,
        None => nfd.slope(set_point.n)?,
    };
    let g = gates.len();
    let nx = g + 1;
    let mut a = DMatrix::identity(nx, nx);
    a[(0, 0)] = 1.0 - slope * period;
    let mut b = DMatrix::zeros(nx, g);
    for o in 0..g {
        b[(0, o)] = period;
        b[(o + 1, o)] = -period;
    }
    let c = DMatrix::identity(nx, nx) * period;
    Ok(LinearModel {
        a,
        b,
        c,
        period,
        set_point: set_point.clone(),
        delay_steps: vec![0; g],
    })
}

/// Inserts a shift chain of `delays[o]` states for every delayed gate: the
/// released flow enters the first link of the chain and the last link feeds
/// the accumulation row.
pub fn augment_delays(model: &LinearModel, delays: &[usize]) -> Result<LinearModel> {
    let g = model.num_inputs();
    if delays.len() != g {
        return Err(Error::Dimension {
            context: "delay vector",
            expected: g,
            got: delays.len(),
        });
    }
    if model.delay_steps.iter().any(|&k| k > 0) {
        return Err(Error::invalid("delays", "model is already augmented"));
    }
    if delays.iter().all(|&k| k == 0) {
        return Ok(model.clone());
    }
    let nx0 = model.num_states();
    let nx = nx0 + delays.iter().sum::<usize>();
    let t = model.period;

    let mut a = DMatrix::zeros(nx, nx);
    a.view_mut((0, 0), (nx0, nx0)).copy_from(&model.a);
    let mut b = DMatrix::zeros(nx, g);
    b.view_mut((0, 0), (nx0, g)).copy_from(&model.b);
    let mut c = DMatrix::zeros(nx, model.num_disturbances());
    c.view_mut((0, 0), (nx0, model.num_disturbances())).copy_from(&model.c);

    let mut next = nx0;
    for (o, &k) in delays.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let first = next;
        let last = next + k - 1;
        b[(0, o)] = 0.0;
        b[(first, o)] = 1.0;
        for i in first..last {
            a[(i + 1, i)] = 1.0;
        }
        a[(0, last)] = t;
        next += k;
    }
    Ok(LinearModel {
        a,
        b,
        c,
        period: t,
        set_point: model.set_point.clone(),
        delay_steps: delays.to_vec(),
    })
}

/// Diagonal stage weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: DVector<f64>,
    pub r: DVector<f64>,
}

impl Weights {
    /// `Q = diag(1/w, 1/l_max...)` on physical states (zero on delay chains),
    /// `R = r I`.
    pub fn standard(model: &LinearModel, gates: &[Gate], w: f64, r: f64) -> Weights {
        let mut q = DVector::zeros(model.num_states());
        q[0] = 1.0 / w;
        for (o, g) in gates.iter().enumerate() {
            q[o + 1] = 1.0 / g.storage;
        }
        Weights {
            q,
            r: DVector::from_element(model.num_inputs(), r),
        }
    }
}

/// Absolute bounds on the physical states and the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
}

impl Bounds {
    /// `0 <= n <= n_max`, `0 <= l <= l_max`, `q_min <= q <= q_max`.
    pub fn physical(nfd: &NfdParams, gates: &[Gate]) -> Bounds {
        let g = gates.len();
        let mut x_hi = DVector::zeros(g + 1);
        x_hi[0] = nfd.n_max;
        for (o, gate) in gates.iter().enumerate() {
            x_hi[o + 1] = gate.storage;
        }
        Bounds {
            x_lo: DVector::zeros(g + 1),
            x_hi,
            u_lo: DVector::from_iterator(g, gates.iter().map(|g| g.q_min)),
            u_hi: DVector::from_iterator(g, gates.iter().map(|g| g.q_max)),
        }
    }

    pub fn unbounded(num_physical: usize, num_inputs: usize) -> Bounds {
        Bounds {
            x_lo: DVector::from_element(num_physical, f64::NEG_INFINITY),
            x_hi: DVector::from_element(num_physical, f64::INFINITY),
            u_lo: DVector::from_element(num_inputs, f64::NEG_INFINITY),
            u_hi: DVector::from_element(num_inputs, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub horizon: usize,
    pub num_states: usize,
    pub num_inputs: usize,
    pub num_disturbances: usize,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Gradient map for the initial deviation.
    pub f: DMatrix<f64>,
    /// Gradient map for the stacked disturbance deviation.
    pub g: DMatrix<f64>,
    /// Full inequality matrix `[Gamma_p; -Gamma_p; I; -I]`; rows with an
    /// infinite bound are dropped.
    pub l: DMatrix<f64>,
    /// Input rows only, `[I; -I]` (same infinite-bound filtering).
    pub l_inputs: DMatrix<f64>,
    /// Stacked row indices of `dX` that carry state bounds, with their
    /// deviation bounds.
    state_rows: Vec<(usize, f64, f64)>,
    input_hi: Vec<(usize, f64)>,
    input_lo: Vec<(usize, f64)>,
}

/// Stacks the model over `horizon` steps and forms the QP data.
pub fn condense(model: &LinearModel, weights: &Weights, horizon: usize, bounds: &Bounds) -> Result<CondensedQp> {
    let nx = model.num_states();
    let nu = model.num_inputs();
    let nd = model.num_disturbances();
    let np = model.num_physical();
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    for (ctx, expected, got) in [
        ("state weights", nx, weights.q.len()),
        ("input weights", nu, weights.r.len()),
        ("state bounds", np, bounds.x_lo.len()),
        ("state bounds", np, bounds.x_hi.len()),
        ("input bounds", nu, bounds.u_lo.len()),
        ("input bounds", nu, bounds.u_hi.len()),
    ] {
        if expected != got {
            return Err(Error::Dimension { context: ctx, expected, got });
        }
    }
    if weights.q.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("weights.q", "must be nonnegative"));
    }
    if weights.r.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite { context: "input weight R" });
    }

    let n = horizon;
    // powers[i] = A^i for i = 0..=N
    let mut powers = Vec::with_capacity(n + 1);
    powers.push(DMatrix::<f64>::identity(nx, nx));
    for i in 0..n {
        powers.push(&model.a * &powers[i]);
    }
    let ab: Vec<DMatrix<f64>> = powers[..n].iter().map(|p| p * &model.b).collect();
    let ac: Vec<DMatrix<f64>> = powers[..n].iter().map(|p| p * &model.c).collect();

    let mut phi = DMatrix::zeros(n * nx, nx);
    let mut gamma = DMatrix::zeros(n * nx, n * nu);
    let mut z = DMatrix::zeros(n * nx, n * nd);
    for i in 0..n {
        phi.view_mut((i * nx, 0), (nx, nx)).copy_from(&powers[i + 1]);
        for j in 0..=i {
            gamma.view_mut((i * nx, j * nu), (nx, nu)).copy_from(&ab[i - j]);
            z.view_mut((i * nx, j * nd), (nx, nd)).copy_from(&ac[i - j]);
        }
    }

    let qbar = DVector::from_iterator(n * nx, (0..n).flat_map(|_| weights.q.iter().copied()));
    let mut qgamma = gamma.clone();
    for (mut row, &w) in qgamma.row_iter_mut().zip(qbar.iter()) {
        row *= w;
    }
    let mut h = gamma.tr_mul(&qgamma);
    for k in 0..n {
        for i in 0..nu {
            h[(k * nu + i, k * nu + i)] += weights.r[i];
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let f = qgamma.tr_mul(&phi);
    let g = qgamma.tr_mul(&z);

    let sp_x = model.state_set_point();
    let mut state_rows = Vec::new();
    for k in 0..n {
        for i in 0..np {
            let lo = bounds.x_lo[i] - sp_x[i];
            let hi = bounds.x_hi[i] - sp_x[i];
            if lo.is_finite() || hi.is_finite() {
                state_rows.push((k * nx + i, lo, hi));
            }
        }
    }
    let mut input_hi = Vec::new();
    let mut input_lo = Vec::new();
    for k in 0..n {
        for i in 0..nu {
            let q_hat = model.set_point.flows[i];
            let hi = bounds.u_hi[i] - q_hat;
            let lo = bounds.u_lo[i] - q_hat;
            if hi.is_finite() {
                input_hi.push((k * nu + i, hi));
            }
            if lo.is_finite() {
                input_lo.push((k * nu + i, lo));
            }
        }
    }

    let hi_rows: Vec<_> = state_rows.iter().filter(|r| r.2.is_finite()).collect();
    let lo_rows: Vec<_> = state_rows.iter().filter(|r| r.1.is_finite()).collect();
    let m_in = input_hi.len() + input_lo.len();
    let mut l_inputs = DMatrix::zeros(m_in, n * nu);
    for (r, &(col, _)) in input_hi.iter().enumerate() {
        l_inputs[(r, col)] = 1.0;
    }
    for (r, &(col, _)) in input_lo.iter().enumerate() {
        l_inputs[(input_hi.len() + r, col)] = -1.0;
    }
    let m_state = hi_rows.len() + lo_rows.len();
    let mut l = DMatrix::zeros(m_state + m_in, n * nu);
    for (r, row) in hi_rows.iter().enumerate() {
        l.row_mut(r).copy_from(&gamma.row(row.0));
    }
    for (r, row) in lo_rows.iter().enumerate() {
        l.row_mut(hi_rows.len() + r).copy_from(&(-gamma.row(row.0)));
    }
    l.view_mut((m_state, 0), (m_in, n * nu)).copy_from(&l_inputs);

    Ok(CondensedQp {
        horizon,
        num_states: nx,
        num_inputs: nu,
        num_disturbances: nd,
        phi,
        gamma,
        z,
        h,
        f,
        g,
        l,
        l_inputs,
        state_rows,
        input_hi,
        input_lo,
    })
}

impl CondensedQp {
    /// Stacked state deviations `dX(1..=N)`.
    pub fn predict(&self, dx0: &DVector<f64>, du: &DVector<f64>, dd: &DVector<f64>) -> DVector<f64> {
        &self.phi * dx0 + &self.gamma * du + &self.z * dd
    }

    pub fn gradient(&self, dx0: &DVector<f64>, dd: &DVector<f64>) -> DVector<f64> {
        &self.f * dx0 + &self.g * dd
    }

    /// Right-hand side matching [`CondensedQp::l`] (or only the input rows).
    pub fn rhs(&self, dx0: &DVector<f64>, dd: &DVector<f64>, include_state_rows: bool) -> DVector<f64> {
        let mut w = Vec::with_capacity(self.l.nrows());
        if include_state_rows {
            let free = &self.phi * dx0 + &self.z * dd;
            w.extend(
                self.state_rows
                    .iter()
                    .filter(|r| r.2.is_finite())
                    .map(|&(i, _, hi)| hi - free[i]),
            );
            w.extend(
                self.state_rows
                    .iter()
                    .filter(|r| r.1.is_finite())
                    .map(|&(i, lo, _)| free[i] - lo),
            );
        }
        w.extend(self.input_hi.iter().map(|&(_, hi)| hi));
        w.extend(self.input_lo.iter().map(|&(_, lo)| -lo));
        DVector::from_vec(w)
    }

    pub fn num_state_rows(&self) -> usize {
        self.l.nrows() - self.l_inputs.nrows()
    }

    pub fn problem(&self, dx0: &DVector<f64>, dd: &DVector<f64>, include_state_rows: bool) -> QpProblem {
        let l = if include_state_rows { &self.l } else { &self.l_inputs };
        QpProblem::new(
            self.h.clone(),
            self.gradient(dx0, dd),
            l.clone(),
            self.rhs(dx0, dd, include_state_rows),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gates(count: usize) -> Vec<Gate> {
        (1..=count)
            .map(|id| Gate::from_greens(id, 100.0 + 10.0 * id as f64, 1800.0, 90.0, [15.0, 45.0, 75.0], 0).unwrap())
            .collect()
    }

    fn model(count: usize) -> LinearModel {
        let gs = gates(count);
        linearize(&NfdParams::san_francisco(), &gs, &SetPoint::nominal(4000.0, &gs), 0.05, None).unwrap()
    }

    #[test]
    fn structure_for_fifteen_gates() {
        let m = model(15);
        assert_eq!(m.a.shape(), (16, 16));
        assert_eq!(m.b.shape(), (16, 15));
        assert_eq!(m.c, DMatrix::identity(16, 16) * 0.05);
        let slope = 24.2784 / 7.0;
        assert!((m.a[(0, 0)] - (1.0 - slope * 0.05)).abs() < 1e-12);
        assert!((m.a[(0, 0)] - 0.8265).abs() < 1e-4);
        assert!(m.b.row(0).iter().all(|&v| v == 0.05));
        for o in 0..15 {
            assert_eq!(m.b[(o + 1, o)], -0.05);
        }
    }

    #[test]
    fn override_and_small_period() {
        let gs = gates(2);
        let sp = SetPoint::nominal(4000.0, &gs);
        let m = linearize(&NfdParams::san_francisco(), &gs, &sp, 0.05, Some(4.94)).unwrap();
        assert!((m.a[(0, 0)] - (1.0 - 4.94 * 0.05)).abs() < 1e-15);
        let tiny = linearize(&NfdParams::san_francisco(), &gs, &sp, 1e-12, None).unwrap();
        assert!((tiny.a - DMatrix::identity(3, 3)).amax() < 1e-10);
        assert!(tiny.b.amax() < 1e-11);
    }

    #[test]
    fn rejects_set_point_on_cap_or_outside() {
        let gs = gates(1);
        let mut nfd = NfdParams::san_francisco();
        nfd.exit_cap = Some(10_000.0);
        assert!(linearize(&nfd, &gs, &SetPoint::nominal(4000.0, &gs), 0.05, None).is_err());
        let nfd = NfdParams::san_francisco();
        assert!(linearize(&nfd, &gs, &SetPoint::nominal(13_000.0, &gs), 0.05, None).is_err());
    }

    #[test]
    fn no_delay_is_identity_augmentation() {
        let m = model(3);
        let aug = augment_delays(&m, &[0, 0, 0]).unwrap();
        assert_eq!(aug.a, m.a);
        assert_eq!(aug.b, m.b);
    }

    #[test]
    fn impulse_reaches_accumulation_after_delay() {
        let m = model(1);
        let aug = augment_delays(&m, &[2]).unwrap();
        assert_eq!(aug.num_states(), 4);
        let mut x = DVector::zeros(4);
        let dd = DVector::zeros(2);
        let mut n_hist = Vec::new();
        for k in 0..4 {
            let du = DVector::from_element(1, if k == 0 { 1.0 } else { 0.0 });
            x = aug.step(&x, &du, &dd);
            n_hist.push(x[0]);
        }
        assert_eq!(n_hist[0], 0.0);
        assert_eq!(n_hist[1], 0.0);
        assert!((n_hist[2] - 0.05).abs() < 1e-15);
        // the queue responds immediately
        assert!((x[1] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn single_step_hessian() {
        let m = model(2);
        let w = Weights::standard(&m, &gates(2), 2000.0, 1e-5);
        let cq = condense(&m, &w, 1, &Bounds::physical(&NfdParams::san_francisco(), &gates(2))).unwrap();
        let expect = m.b.transpose() * DMatrix::from_diagonal(&w.q) * &m.b + DMatrix::from_diagonal(&w.r);
        assert!((&cq.h - expect).amax() < 1e-15);
    }

    #[test]
    fn zero_state_weight_gives_zero_move() {
        let m = model(2);
        let mut w = Weights::standard(&m, &gates(2), 2000.0, 1e-5);
        w.q.fill(0.0);
        let cq = condense(&m, &w, 4, &Bounds::unbounded(3, 2)).unwrap();
        let dx0 = DVector::from_vec(vec![500.0, 10.0, -3.0]);
        let dd = DVector::from_element(4 * 3, 7.0);
        let u = crate::qp::solve_unconstrained(&cq.h, &cq.gradient(&dx0, &dd)).unwrap();
        assert!(u.amax() < 1e-12);
    }

    #[test]
    fn residual_vanishes_at_equilibrium() {
        let gs = gates(2);
        let nfd = NfdParams::san_francisco();
        let mut sp = SetPoint::nominal(4000.0, &gs);
        let r = sp.residual(&nfd).unwrap();
        assert_eq!(r[1], 0.0);
        sp.disturbance[0] = nfd.output(4000.0).unwrap() - sp.flows.iter().sum::<f64>();
        assert!(sp.residual(&nfd).unwrap()[0].abs() < 1e-9);
    }
}
