//! Rolling-horizon multi-gated controller (MGC) and its single-region variant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{augment_delays, condense, linearize, Bounds, CondensedQp, LinearModel, SetPoint, Weights};
use crate::nfd::NfdParams;
use crate::plant::{DemandProfile, Gate, NetworkState, Plant, StepOutcome};
use crate::qp::{ActiveSetSolver, Factorization, KktResiduals, QpData, QpSolution, QpStatus, SolverOptions};

/// Gate demand the controller treats as nominal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandBaseline {
    /// Every gate is fed its nominal flow `q_nom`; scenario demand comes on top.
    #[default]
    Nominal,
    /// Gates receive only the scenario demand.
    Zero,
}

impl DemandBaseline {
    pub fn flow(self, gate: &Gate) -> f64 {
        match self {
            DemandBaseline::Nominal => gate.q_nom,
            DemandBaseline::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Re-solve with input bounds only and flag the step.
    #[default]
    DropStateBounds,
    /// Propagate the infeasibility as an error.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgcConfig {
    /// Optimisation and prediction horizon `N_o = N_p` (periods).
    pub horizon: usize,
    /// Accumulation weight: `Q[0] = 1 / w`.
    pub w: f64,
    /// Control weight `R = r I`.
    pub r: f64,
    /// Target accumulation (veh).
    pub set_point_n: f64,
    /// Taken from the plant section of the run configuration.
    #[serde(skip)]
    pub demand_baseline: DemandBaseline,
    /// Replaces the fundamental-diagram slope at the set point (1/h).
    pub slope_override: Option<f64>,
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub fallback: Fallback,
}

impl Default for MgcConfig {
    fn default() -> Self {
        MgcConfig {
            horizon: 15,
            w: 2000.0,
            r: 1e-5,
            set_point_n: 4000.0,
            demand_baseline: DemandBaseline::Nominal,
            slope_override: None,
            tol: 1e-8,
            max_iter: None,
            fallback: Fallback::DropStateBounds,
        }
    }
}

impl MgcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("controller.horizon", "must be at least 1"));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::invalid("controller.w", "must be positive"));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("controller.r", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("controller.tol", "must be positive"));
        }
        Ok(())
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            scale: true,
        }
    }
}

/// Per-step solver report.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
    pub active: usize,
    /// The state-bound rows were dropped after an infeasible solve.
    pub fallback: bool,
    /// Components moved by the final clip to `[q_min, q_max]`.
    pub clipped: usize,
}

/// Commands for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    /// Ordered flow per gate (veh/h).
    pub flows: Vec<f64>,
    pub diagnostics: Option<StepDiagnostics>,
}

/// Anything that turns a measured state into gate commands.
pub trait Controller {
    fn name(&self) -> &str;
    fn command(&mut self, k: usize, state: &NetworkState, demand: &DemandProfile) -> Result<Command>;
}

/// Factorizations of a condensed QP with and without the state rows; both
/// share `H`, so only the gradient and right-hand side change per step.
#[derive(Debug, Clone)]
struct QpCache {
    solver: ActiveSetSolver,
    full: Factorization,
    inputs: Factorization,
}

impl QpCache {
    fn new(cq: &CondensedQp, cfg: &MgcConfig) -> Result<QpCache> {
        let solver = ActiveSetSolver::new(cfg.solver_options());
        Ok(QpCache {
            full: solver.factor(&cq.h, &cq.l, None)?,
            inputs: solver.factor(&cq.h, &cq.l_inputs, None)?,
            solver,
        })
    }

    fn solve(&self, cq: &CondensedQp, f: &DVector<f64>, w: &DVector<f64>, with_states: bool) -> Result<QpSolution> {
        let (fac, l) = if with_states {
            (&self.full, &cq.l)
        } else {
            (&self.inputs, &cq.l_inputs)
        };
        let data = QpData { h: &cq.h, f, l, w, eq: None };
        self.solver.solve_factored(fac, data)
    }
}

/// Solves the QP, falling back to input bounds only when the state rows make
/// it infeasible.
fn solve_with_fallback(
    cq: &CondensedQp,
    cache: &QpCache,
    dx0: &DVector<f64>,
    dd: &DVector<f64>,
    cfg: &MgcConfig,
) -> Result<(DVector<f64>, StepDiagnostics)> {
    let f = cq.gradient(dx0, dd);
    let mut fallback = false;
    let mut sol = cache.solve(cq, &f, &cq.rhs(dx0, dd, true), true)?;
    if sol.status == QpStatus::Infeasible {
        if cfg.fallback == Fallback::Fail {
            return Err(Error::Infeasible);
        }
        fallback = true;
        sol = cache.solve(cq, &f, &cq.rhs(dx0, dd, false), false)?;
    }
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(Error::Infeasible),
        QpStatus::MaxIterations => {
            return Err(Error::MaxIterations {
                iterations: sol.iterations,
            })
        }
    }
    let diag = StepDiagnostics {
        status: sol.status,
        iterations: sol.iterations,
        kkt: sol.kkt,
        active: sol.active.len(),
        fallback,
        clipped: 0,
    };
    Ok((sol.u, diag))
}

/// Multi-gated rolling-horizon controller.
#[derive(Debug, Clone)]
pub struct Mgc {
    pub config: MgcConfig,
    pub model: LinearModel,
    pub condensed: CondensedQp,
    gates: Vec<Gate>,
    residual: DVector<f64>,
    cache: QpCache,
}

impl Mgc {
    pub fn new(plant: &Plant, config: &MgcConfig) -> Result<Mgc> {
        Mgc::with_bounds(plant, config, None)
    }

    /// As [`Mgc::new`] with explicit bounds; `None` uses the physical ones.
    pub fn with_bounds(plant: &Plant, config: &MgcConfig, bounds: Option<Bounds>) -> Result<Mgc> {
        config.validate()?;
        let gates = &plant.gates;
        let mut sp = SetPoint::nominal(config.set_point_n, gates);
        for (o, g) in gates.iter().enumerate() {
            sp.disturbance[o + 1] = config.demand_baseline.flow(g);
        }
        let base = linearize(&plant.nfd, gates, &sp, plant.period, config.slope_override)?;
        let delays: Vec<usize> = gates.iter().map(|g| g.delay_steps).collect();
        let model = augment_delays(&base, &delays)?;
        let weights = Weights::standard(&model, gates, config.w, config.r);
        let bounds = bounds.unwrap_or_else(|| Bounds::physical(&plant.nfd, gates));
        let condensed = condense(&model, &weights, config.horizon, &bounds)?;
        let residual = sp.residual(&plant.nfd)?;
        let cache = QpCache::new(&condensed, config)?;
        Ok(Mgc {
            config: config.clone(),
            model,
            condensed,
            gates: gates.clone(),
            residual,
            cache,
        })
    }

    /// Deviation of the measured state from the set point. Queues are measured
    /// as entrance-link plus virtual queue; delay chains as in-transit flows,
    /// most recent first.
    pub fn deviation(&self, state: &NetworkState) -> DVector<f64> {
        let sp = &self.model.set_point;
        let mut x = Vec::with_capacity(self.model.num_states());
        x.push(state.n - sp.n);
        for (o, tq) in state.total_queues().into_iter().enumerate() {
            x.push(tq - sp.queues[o]);
        }
        for (o, buf) in state.in_transit.iter().enumerate() {
            x.extend(buf.iter().rev().map(|q| q - sp.flows[o]));
        }
        DVector::from_vec(x)
    }

    /// Stacked disturbance deviations over the horizon starting at `k`. The
    /// network disturbance is forecast as zero; gate demand is taken from the
    /// profile.
    pub fn disturbance_forecast(&self, k: usize, demand: &DemandProfile) -> DVector<f64> {
        let n = self.config.horizon;
        let nd = self.model.num_disturbances();
        let sp = &self.model.set_point;
        let mut dd = DVector::zeros(n * nd);
        for (j, row) in demand.window(k, n).into_iter().enumerate() {
            dd[j * nd] = -sp.disturbance[0] + self.residual[0];
            for (o, &d) in row.iter().enumerate() {
                dd[j * nd + o + 1] = d - sp.disturbance[o + 1] + self.residual[o + 1];
            }
        }
        dd
    }

    /// First control move for deviation `dx0` and disturbance forecast `dd`.
    pub fn step_deviation(&self, dx0: &DVector<f64>, dd: &DVector<f64>) -> Result<(Vec<f64>, StepDiagnostics)> {
        let (du, mut diag) = solve_with_fallback(&self.condensed, &self.cache, dx0, dd, &self.config)?;
        let mut flows = Vec::with_capacity(self.gates.len());
        for (o, g) in self.gates.iter().enumerate() {
            let q = self.model.set_point.flows[o] + du[o];
            let clipped = q.clamp(g.q_min, g.q_max);
            if (clipped - q).abs() > 1e-9 * g.q_max {
                diag.clipped += 1;
            }
            flows.push(clipped);
        }
        Ok((flows, diag))
    }

    pub fn mgc_step(&self, k: usize, state: &NetworkState, demand: &DemandProfile) -> Result<Command> {
        let dx0 = self.deviation(state);
        let dd = self.disturbance_forecast(k, demand);
        let (flows, diag) = self.step_deviation(&dx0, &dd)?;
        Ok(Command {
            flows,
            diagnostics: Some(diag),
        })
    }
}

impl Controller for Mgc {
    fn name(&self) -> &str {
        "mgc"
    }

    fn command(&mut self, k: usize, state: &NetworkState, demand: &DemandProfile) -> Result<Command> {
        self.mgc_step(k, state, demand)
    }
}

/// Single-region controller acting on the accumulation alone and returning
/// a global perimeter flow.
#[derive(Debug, Clone)]
pub struct Siso {
    pub config: MgcConfig,
    pub model: LinearModel,
    pub condensed: CondensedQp,
    pub q_lo: f64,
    pub q_hi: f64,
    residual: f64,
    cache: QpCache,
}

impl Siso {
    pub fn new(nfd: &NfdParams, gates: &[Gate], period: f64, config: &MgcConfig) -> Result<Siso> {
        config.validate()?;
        let n_hat = config.set_point_n;
        if !(n_hat > 0.0 && n_hat < nfd.n_max) {
            return Err(Error::invalid("set_point.n", format!("must lie in (0, {})", nfd.n_max)));
        }
        let q_hat: f64 = gates.iter().map(|g| g.q_nom).sum();
        let q_lo: f64 = gates.iter().map(|g| g.q_min).sum();
        let q_hi: f64 = gates.iter().map(|g| g.q_max).sum();
        let slope = match config.slope_override {
            Some(s) => s,
            None => nfd.capped_slope(n_hat)?,
        };
        let set_point = SetPoint {
            n: n_hat,
            queues: Vec::new(),
            flows: vec![q_hat],
            disturbance: vec![0.0],
        };
        let model = LinearModel {
            a: DMatrix::from_element(1, 1, 1.0 - slope * period),
            b: DMatrix::from_element(1, 1, period),
            c: DMatrix::from_element(1, 1, period),
            period,
            set_point: set_point.clone(),
            delay_steps: vec![0],
        };
        let weights = Weights {
            q: DVector::from_element(1, 1.0 / config.w),
            r: DVector::from_element(1, config.r),
        };
        let bounds = Bounds {
            x_lo: DVector::zeros(1),
            x_hi: DVector::from_element(1, nfd.n_max),
            u_lo: DVector::from_element(1, q_lo),
            u_hi: DVector::from_element(1, q_hi),
        };
        let condensed = condense(&model, &weights, config.horizon, &bounds)?;
        let residual = set_point.residual(nfd)?[0];
        let cache = QpCache::new(&condensed, config)?;
        Ok(Siso {
            config: config.clone(),
            model,
            condensed,
            q_lo,
            q_hi,
            residual,
            cache,
        })
    }

    /// Global flow `q_G` for accumulation `n` and a network-disturbance
    /// forecast `d_n` (veh/h, held over the horizon).
    pub fn siso_step(&self, n: f64, d_n: f64) -> Result<(f64, StepDiagnostics)> {
        let dx0 = DVector::from_element(1, n - self.model.set_point.n);
        let dd = DVector::from_element(self.config.horizon, d_n + self.residual);
        let (du, mut diag) = solve_with_fallback(&self.condensed, &self.cache, &dx0, &dd, &self.config)?;
        let q = self.model.set_point.flows[0] + du[0];
        let clipped = q.clamp(self.q_lo, self.q_hi);
        if (clipped - q).abs() > 1e-9 * self.q_hi {
            diag.clipped = 1;
        }
        Ok((clipped, diag))
    }
}

/// One logged period of a closed-loop run. Row `k` holds the state at `k` and
/// the flows of the period that ended at `k` (zeros for `k = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub n: f64,
    pub queues: Vec<f64>,
    pub virtual_queues: Vec<f64>,
    pub released: Vec<f64>,
    pub commands: Vec<f64>,
    pub greens: Vec<f64>,
    pub disturbance: f64,
    pub exit_flow: f64,
    pub gate_demand: f64,
    pub clamp_adjust: f64,
    pub gridlock: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub period: f64,
    pub rows: Vec<TrajectoryRow>,
    /// Solver reports, one per period (empty for controllers without a QP).
    pub diagnostics: Vec<Option<StepDiagnostics>>,
    pub initial_total: f64,
    pub final_total: f64,
}

impl Trajectory {
    pub fn gridlock_events(&self) -> usize {
        self.rows.iter().filter(|r| r.gridlock).count()
    }

    pub fn clamp_events(&self) -> usize {
        self.rows.iter().filter(|r| r.clamp_adjust != 0.0).count()
    }

    pub fn fallback_steps(&self) -> usize {
        self.diagnostics.iter().flatten().filter(|d| d.fallback).count()
    }

    /// Vehicles that should be in the system according to the recorded
    /// inflows, exits and clamp adjustments.
    pub fn expected_final_total(&self) -> f64 {
        let net: f64 = self.rows[1..]
            .iter()
            .map(|r| self.period * (r.gate_demand + r.disturbance - r.exit_flow) + r.clamp_adjust)
            .sum();
        self.initial_total + net
    }

    /// Relative conservation error `|final - expected| / max(1, initial, final)`.
    pub fn conservation_error(&self) -> f64 {
        let scale = self.initial_total.abs().max(self.final_total.abs()).max(1.0);
        (self.final_total - self.expected_final_total()).abs() / scale
    }
}

fn row(k: usize, state: &NetworkState, gates: &[Gate]) -> TrajectoryRow {
    let ng = gates.len();
    TrajectoryRow {
        k,
        n: state.n,
        queues: state.queues.clone(),
        virtual_queues: state.virtual_queues.clone(),
        released: vec![0.0; ng],
        commands: vec![0.0; ng],
        greens: vec![0.0; ng],
        disturbance: 0.0,
        exit_flow: 0.0,
        gate_demand: 0.0,
        clamp_adjust: 0.0,
        gridlock: false,
    }
}

/// Closed loop over `horizon` periods: measure, command, apply, log.
pub fn run_rolling_horizon(
    name: &str,
    plant: &Plant,
    initial: NetworkState,
    demand: &DemandProfile,
    horizon: usize,
    controller: &mut dyn Controller,
) -> Result<Trajectory> {
    let wrap = |step: usize| {
        move |e: Error| Error::Run {
            scenario: name.to_string(),
            step,
            source: Box::new(e),
        }
    };
    plant.check_state(&initial).map_err(wrap(0))?;
    let mut state = initial;
    let initial_total = state.total_vehicles(plant.period);
    let mut rows = Vec::with_capacity(horizon + 1);
    rows.push(row(0, &state, &plant.gates));
    let mut diagnostics = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let cmd = controller.command(k, &state, demand).map_err(wrap(k))?;
        let d_n = demand.disturbance_at(k, state.n);
        let gate_demand = demand.at(k);
        let out: StepOutcome = plant
            .step(&mut state, &cmd.flows, gate_demand, d_n)
            .map_err(wrap(k))?;
        let mut r = row(k + 1, &state, &plant.gates);
        r.greens = plant
            .gates
            .iter()
            .zip(&cmd.flows)
            .map(|(g, &q)| g.green_for_flow(q))
            .collect();
        r.commands = cmd.flows;
        r.released = out.released;
        r.disturbance = out.disturbance;
        r.exit_flow = out.exit_flow;
        r.gate_demand = gate_demand.iter().sum();
        r.clamp_adjust = out.clamp_adjust;
        r.gridlock = out.gridlock;
        rows.push(r);
        diagnostics.push(cmd.diagnostics);
    }
    Ok(Trajectory {
        period: plant.period,
        rows,
        diagnostics,
        initial_total,
        final_total: state.total_vehicles(plant.period),
    })
}
