//! Turning a scenario description into an initial state, demand profile and
//! controller, and running it.

use crate::allocation::{AllocationController, NoControl, Policy};
use crate::error::Result;
use crate::mpc::{run_rolling_horizon, Controller, Mgc, MgcConfig, Trajectory};
use crate::plant::{make_trapezoid, DemandProfile, NetworkState, Plant};

use super::config::{Config, ScenarioConfig};
use super::metrics::{evaluate, RunMetrics};

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: String,
    pub policy: Policy,
    pub horizon: usize,
    pub trajectory: Trajectory,
    pub metrics: RunMetrics,
}

pub fn initial_state(plant: &Plant, scenario: &ScenarioConfig) -> NetworkState {
    let queues = plant.gates.iter().map(|g| scenario.queue_fraction * g.storage).collect();
    NetworkState::new(scenario.n0, queues, &plant.gates)
}

/// Baseline gate demand plus the scenario's trapezoid, one row per period.
pub fn demand_profile(cfg: &Config, scenario: &ScenarioConfig) -> Result<DemandProfile> {
    let shape = cfg.shape(&scenario.demand)?;
    let mut rows = vec![Vec::with_capacity(cfg.gates.len()); scenario.horizon];
    for gate in &cfg.gates {
        let base = cfg.plant.demand_baseline.flow(gate);
        let pulse = make_trapezoid(gate, &shape, scenario.horizon)?;
        for (row, d) in rows.iter_mut().zip(pulse) {
            row.push(base + d);
        }
    }
    Ok(DemandProfile {
        gate_demand: rows,
        disturbance: cfg.disturbance,
        seed: scenario.seed,
    })
}

pub fn build_controller(policy: Policy, plant: &Plant, controller: &MgcConfig) -> Result<Box<dyn Controller>> {
    Ok(match policy {
        Policy::Mgc => Box::new(Mgc::new(plant, controller)?),
        Policy::Cap | Policy::Oap => Box::new(AllocationController::new(plant, controller, policy)?),
        Policy::None => Box::new(NoControl::new(&plant.gates)),
    })
}

/// Runs `scenario` under `policy` with optimisation horizon `horizon`
/// (`None` keeps the configured one).
pub fn run_scenario(cfg: &Config, scenario: &ScenarioConfig, policy: Policy, horizon: Option<usize>) -> Result<RunResult> {
    let plant = cfg.plant()?;
    let mut controller_cfg = cfg.controller.clone();
    if let Some(n) = horizon {
        controller_cfg.horizon = n;
    }
    let mut controller = build_controller(policy, &plant, &controller_cfg)?;
    let demand = demand_profile(cfg, scenario)?;
    let init = initial_state(&plant, scenario);
    let trajectory = run_rolling_horizon(&scenario.name, &plant, init, &demand, scenario.horizon, controller.as_mut())?;
    let metrics = evaluate(&trajectory, &plant.gates, plant.nfd.n_max);
    Ok(RunResult {
        scenario: scenario.name.clone(),
        policy,
        horizon: controller_cfg.horizon,
        trajectory,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demand_rows_stack_baseline_and_pulse() {
        let cfg = Config::san_francisco();
        let s = cfg.scenario("n3000-medium").unwrap();
        let d = demand_profile(&cfg, s).unwrap();
        assert_eq!(d.gate_demand.len(), 40);
        let g = &cfg.gates[0];
        assert!((d.at(10)[0] - (g.q_nom + 0.25 * g.saturation_flow)).abs() < 1e-9);
        assert_eq!(d.at(39)[0], g.q_nom);
    }

    #[test]
    fn initial_queues_follow_fraction() {
        let cfg = Config::san_francisco();
        let plant = cfg.plant().unwrap();
        let s = cfg.scenario("n7000-none").unwrap();
        let x = initial_state(&plant, s);
        assert_eq!(x.n, 7000.0);
        for (l, g) in x.queues.iter().zip(&cfg.gates) {
            assert!((l - 0.7 * g.storage).abs() < 1e-12);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = Config::san_francisco();
        let s = cfg.scenario("n10000-high").unwrap();
        let a = run_scenario(&cfg, s, Policy::Cap, Some(5)).unwrap();
        let b = run_scenario(&cfg, s, Policy::Cap, Some(5)).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.metrics, b.metrics);
    }
}
