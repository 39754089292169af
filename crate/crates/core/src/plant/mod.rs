//! Nonlinear simulator of the protected network and its gated entrance links.
//!
//! The accumulation `n` is integrated once per controller period `T`; gate
//! queues are integrated `m` times per period with `T_l = T / m`. Vehicles that
//! do not fit into an entrance link wait in a virtual upstream queue. Released
//! flows may reach the network after `kappa` whole periods.

pub mod demand;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nfd::NfdParams;

pub use demand::{make_disturbance, make_trapezoid, DemandProfile, DisturbanceSpec, Trapezoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    /// 1-based gate index.
    pub id: usize,
    /// Entrance-link storage `l_max` (veh).
    pub storage: f64,
    /// Saturation flow (veh/h).
    pub saturation_flow: f64,
    /// Signal cycle (s).
    pub cycle: f64,
    pub g_min: f64,
    pub g_nom: f64,
    pub g_max: f64,
    pub q_min: f64,
    pub q_nom: f64,
    pub q_max: f64,
    /// Travel-time delay in controller periods.
    #[serde(default)]
    pub delay_steps: usize,
}

impl Gate {
    /// Builds a gate whose flow bounds follow from the greens via `q = g S / C`.
    pub fn from_greens(
        id: usize,
        storage: f64,
        saturation_flow: f64,
        cycle: f64,
        greens: [f64; 3],
        delay_steps: usize,
    ) -> Result<Gate> {
        let [g_min, g_nom, g_max] = greens;
        let flow = |g: f64| g * saturation_flow / cycle;
        let gate = Gate {
            id,
            storage,
            saturation_flow,
            cycle,
            g_min,
            g_nom,
            g_max,
            q_min: flow(g_min),
            q_nom: flow(g_nom),
            q_max: flow(g_max),
            delay_steps,
        };
        gate.validate()?;
        Ok(gate)
    }

    pub fn flow_for_green(&self, g: f64) -> f64 {
        g * self.saturation_flow / self.cycle
    }

    /// Green time (s) that realizes flow `q` under the fixed cycle.
    pub fn green_for_flow(&self, q: f64) -> f64 {
        q * self.cycle / self.saturation_flow
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("gate {}.{name}", self.id);
        let values = [
            self.storage,
            self.saturation_flow,
            self.cycle,
            self.g_min,
            self.g_nom,
            self.g_max,
            self.q_min,
            self.q_nom,
            self.q_max,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(field("*"), "all values must be finite"));
        }
        if self.storage <= 0.0 {
            return Err(Error::invalid(field("storage"), "must be positive"));
        }
        if self.saturation_flow <= 0.0 || self.cycle <= 0.0 {
            return Err(Error::invalid(field("saturation_flow/cycle"), "must be positive"));
        }
        if !(0.0 < self.g_min && self.g_min <= self.g_nom && self.g_nom <= self.g_max && self.g_max <= self.cycle) {
            return Err(Error::invalid(
                field("greens"),
                "need 0 < g_min <= g_nom <= g_max <= cycle",
            ));
        }
        if !(self.q_min > 0.0) {
            return Err(Error::invalid(field("q_min"), "must be positive"));
        }
        for (name, g, q) in [
            ("q_min", self.g_min, self.q_min),
            ("q_nom", self.g_nom, self.q_nom),
            ("q_max", self.g_max, self.q_max),
        ] {
            let expect = self.flow_for_green(g);
            if (q - expect).abs() > 1e-9 * expect.abs().max(1.0) {
                return Err(Error::invalid(
                    field(name),
                    format!("{q} disagrees with g*S/C = {expect}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// Protected-network accumulation (veh).
    pub n: f64,
    /// Entrance-link queues (veh).
    pub queues: Vec<f64>,
    /// Vehicles held upstream of full entrance links (veh).
    pub virtual_queues: Vec<f64>,
    /// Per gate, released flows (veh/h) still travelling to the network,
    /// oldest first.
    pub in_transit: Vec<VecDeque<f64>>,
}

impl NetworkState {
    /// State with the given accumulation and queues, empty virtual queues and
    /// zero-filled delay buffers.
    pub fn new(n: f64, queues: Vec<f64>, gates: &[Gate]) -> NetworkState {
        let in_transit = gates
            .iter()
            .map(|g| VecDeque::from(vec![0.0; g.delay_steps]))
            .collect();
        NetworkState {
            n,
            virtual_queues: vec![0.0; queues.len()],
            queues,
            in_transit,
        }
    }

    /// Vehicles in the system: network, queues, virtual queues and the
    /// in-transit flows, each worth `period` hours.
    pub fn total_vehicles(&self, period: f64) -> f64 {
        let transit: f64 = self.in_transit.iter().flatten().sum::<f64>() * period;
        self.n + self.queues.iter().sum::<f64>() + self.virtual_queues.iter().sum::<f64>() + transit
    }

    /// Queue plus virtual queue per gate.
    pub fn total_queues(&self) -> Vec<f64> {
        self.queues
            .iter()
            .zip(&self.virtual_queues)
            .map(|(l, v)| l + v)
            .collect()
    }
}

/// One period of plant evolution, in veh/h unless stated.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Average flow released by each gate during the period.
    pub released: Vec<f64>,
    /// Flow reaching the network this period (released `kappa` periods ago).
    pub arriving: Vec<f64>,
    pub exit_flow: f64,
    pub disturbance: f64,
    /// Vehicles added (positive) or removed by clamping `n` to `[0, n_max]`.
    pub clamp_adjust: f64,
    /// `n` hit `n_max` and was clamped.
    pub gridlock: bool,
    /// The overflow rule forced `q_min` at every gate.
    pub forced_min: bool,
}

/// Realized release rate of one gate for the current sub-step.
///
/// `q_min` when the network is above `c * n_max`; otherwise the smallest of
/// the drainable supply `d + l / T_l`, the command and `q_max`.
pub fn gate_outflow(
    n: f64,
    queue: f64,
    command: f64,
    demand: f64,
    gate: &Gate,
    overflow_fraction: f64,
    n_max: f64,
    substep: f64,
) -> f64 {
    if n >= overflow_fraction * n_max {
        return gate.q_min;
    }
    let supply = demand + queue / substep;
    supply.min(command).min(gate.q_max).max(0.0)
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub nfd: NfdParams,
    pub gates: Vec<Gate>,
    /// Above `c * n_max` every gate is forced to `q_min`.
    pub overflow_fraction: f64,
    /// Controller period `T` (h).
    pub period: f64,
    /// Queue sub-steps per period.
    pub substeps: usize,
}

impl Plant {
    pub fn new(nfd: NfdParams, gates: Vec<Gate>, overflow_fraction: f64, period: f64, substeps: usize) -> Result<Plant> {
        nfd.validate()?;
        for g in &gates {
            g.validate()?;
        }
        if !(overflow_fraction > 0.0 && overflow_fraction < 1.0) {
            return Err(Error::invalid("plant.overflow_fraction", "must lie in (0, 1)"));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::invalid("plant.period", "must be positive"));
        }
        if substeps == 0 {
            return Err(Error::invalid("plant.substeps", "must be at least 1"));
        }
        Ok(Plant {
            nfd,
            gates,
            overflow_fraction,
            period,
            substeps,
        })
    }

    pub fn num_gates(&self) -> usize {
        self.gates.len()
    }

    pub fn substep(&self) -> f64 {
        self.period / self.substeps as f64
    }

    pub fn check_state(&self, state: &NetworkState) -> Result<()> {
        let g = self.gates.len();
        for (ctx, len) in [
            ("state queues", state.queues.len()),
            ("state virtual queues", state.virtual_queues.len()),
            ("state delay buffers", state.in_transit.len()),
        ] {
            if len != g {
                return Err(Error::Dimension { context: ctx, expected: g, got: len });
            }
        }
        for (gate, buf) in self.gates.iter().zip(&state.in_transit) {
            if buf.len() != gate.delay_steps {
                return Err(Error::Dimension {
                    context: "delay buffer length",
                    expected: gate.delay_steps,
                    got: buf.len(),
                });
            }
        }
        self.nfd.output(state.n)?;
        Ok(())
    }

    /// Advances `state` by one controller period under `commands` (veh/h),
    /// gate demands `demands` (veh/h) and network disturbance `disturbance`.
    pub fn step(
        &self,
        state: &mut NetworkState,
        commands: &[f64],
        demands: &[f64],
        disturbance: f64,
    ) -> Result<StepOutcome> {
        let ng = self.gates.len();
        self.check_state(state)?;
        for (ctx, len) in [("commands", commands.len()), ("demands", demands.len())] {
            if len != ng {
                return Err(Error::Dimension { context: ctx, expected: ng, got: len });
            }
        }
        let tl = self.substep();
        let forced_min = state.n >= self.overflow_fraction * self.nfd.n_max;
        let mut released_veh = vec![0.0; ng];
        for _ in 0..self.substeps {
            for (o, gate) in self.gates.iter().enumerate() {
                let d = demands[o];
                let q = gate_outflow(
                    state.n,
                    state.queues[o],
                    commands[o],
                    d,
                    gate,
                    self.overflow_fraction,
                    self.nfd.n_max,
                    tl,
                )
                // A forced release cannot exceed what is physically there.
                .min(d + state.queues[o] / tl);
                released_veh[o] += q * tl;
                let mut l = (state.queues[o] + tl * (d - q)).max(0.0);
                let v = &mut state.virtual_queues[o];
                if l > gate.storage {
                    *v += l - gate.storage;
                    l = gate.storage;
                } else if *v > 0.0 {
                    let moved = v.min(gate.storage - l);
                    *v -= moved;
                    l += moved;
                }
                state.queues[o] = l;
            }
        }

        let released: Vec<f64> = released_veh.iter().map(|v| v / self.period).collect();
        let arriving: Vec<f64> = state
            .in_transit
            .iter_mut()
            .zip(&released)
            .map(|(buf, &r)| {
                if buf.is_empty() {
                    r
                } else {
                    buf.push_back(r);
                    buf.pop_front().unwrap_or(0.0)
                }
            })
            .collect();

        let exit_flow = self.nfd.capped_outflow(state.n)?;
        let raw = state.n + self.period * (arriving.iter().sum::<f64>() - exit_flow + disturbance);
        let clamped = raw.clamp(0.0, self.nfd.n_max);
        state.n = clamped;

        Ok(StepOutcome {
            released,
            arriving,
            exit_flow,
            disturbance,
            clamp_adjust: clamped - raw,
            gridlock: raw > self.nfd.n_max,
            forced_min,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate(storage: f64, delay: usize) -> Gate {
        Gate::from_greens(1, storage, 1800.0, 90.0, [15.0, 45.0, 75.0], delay).unwrap()
    }

    fn plant(gates: Vec<Gate>, substeps: usize) -> Plant {
        Plant::new(NfdParams::san_francisco(), gates, 0.9, 0.05, substeps).unwrap()
    }

    #[test]
    fn gate_flow_consistency() {
        let g = gate(200.0, 0);
        assert_eq!(g.q_min, 300.0);
        assert_eq!(g.q_max, 1500.0);
        assert!((g.green_for_flow(g.q_nom) - g.g_nom).abs() < 1e-12);
        let mut bad = g.clone();
        bad.q_nom += 1e-3;
        assert!(bad.validate().is_err());
        let mut bad = g;
        bad.g_max = 95.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn outflow_cases() {
        let g = gate(200.0, 0);
        let tl = 0.005;
        assert_eq!(gate_outflow(0.95 * 13_000.0, 0.0, 1500.0, 0.0, &g, 0.9, 13_000.0, tl), g.q_min);
        assert_eq!(gate_outflow(1000.0, 0.0, 1500.0, 0.0, &g, 0.9, 13_000.0, tl), 0.0);
        assert_eq!(gate_outflow(1000.0, 1e6, 2000.0, 0.0, &g, 0.9, 13_000.0, tl), g.q_max);
        assert_eq!(gate_outflow(1000.0, 1e6, 700.0, 0.0, &g, 0.9, 13_000.0, tl), 700.0);
    }

    #[test]
    fn single_euler_queue_step() {
        // l = 100, d = 500, q = 300, T = 0.05 h, one sub-step
        let p = plant(vec![gate(200.0, 0)], 1);
        let mut s = NetworkState::new(4000.0, vec![100.0], &p.gates);
        p.step(&mut s, &[300.0], &[500.0], 0.0).unwrap();
        assert!((s.queues[0] - 110.0).abs() < 1e-12);
    }

    #[test]
    fn pure_emptying() {
        let p = plant(vec![gate(200.0, 0)], 10);
        let mut s = NetworkState::new(4000.0, vec![0.0], &p.gates);
        let out = p.step(&mut s, &[0.0], &[0.0], 0.0).unwrap();
        let expect = 4000.0 - 0.05 * p.nfd.output(4000.0).unwrap();
        assert!((s.n - expect).abs() < 1e-9);
        assert_eq!(s.queues[0], 0.0);
        assert_eq!(out.clamp_adjust, 0.0);
    }

    #[test]
    fn delayed_release_arrives_one_period_later() {
        let p = plant(vec![gate(1000.0, 1)], 10);
        let mut s = NetworkState::new(0.0, vec![500.0], &p.gates);
        let first = p.step(&mut s, &[1000.0], &[0.0], 0.0).unwrap();
        assert_eq!(first.arriving[0], 0.0);
        assert!((first.released[0] - 1000.0).abs() < 1e-9);
        assert_eq!(s.n, 0.0);
        let second = p.step(&mut s, &[0.0], &[0.0], 0.0).unwrap();
        assert!((second.arriving[0] - 1000.0).abs() < 1e-9);
        assert!(s.n > 0.0);
    }

    #[test]
    fn overflow_spills_into_virtual_queue_and_refills() {
        let p = plant(vec![gate(100.0, 0)], 10);
        let mut s = NetworkState::new(1000.0, vec![90.0], &p.gates);
        p.step(&mut s, &[0.0], &[1000.0], 0.0).unwrap();
        assert_eq!(s.queues[0], 100.0);
        assert!((s.virtual_queues[0] - 40.0).abs() < 1e-9);
        p.step(&mut s, &[1500.0], &[0.0], 0.0).unwrap();
        assert_eq!(s.virtual_queues[0], 0.0);
        assert!((s.queues[0] - 65.0).abs() < 1e-9, "{}", s.queues[0]);
    }

    #[test]
    fn forced_minimum_above_overflow_threshold() {
        let p = plant(vec![gate(200.0, 0), gate(200.0, 0)], 10);
        let mut s = NetworkState::new(12_000.0, vec![150.0, 150.0], &p.gates);
        let out = p.step(&mut s, &[1500.0, 1500.0], &[0.0, 0.0], 0.0).unwrap();
        assert!(out.forced_min);
        for r in out.released {
            assert!((r - 300.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forced_minimum_is_capped_by_supply() {
        let p = plant(vec![gate(200.0, 0)], 10);
        let mut s = NetworkState::new(12_000.0, vec![1.0], &p.gates);
        let out = p.step(&mut s, &[1500.0], &[0.0], 0.0).unwrap();
        assert!((out.released[0] - 20.0).abs() < 1e-9);
        assert_eq!(s.queues[0], 0.0);
    }

    #[test]
    fn clamp_at_capacity_is_reported() {
        let p = plant(vec![gate(200.0, 0)], 10);
        let mut s = NetworkState::new(12_990.0, vec![0.0], &p.gates);
        let out = p.step(&mut s, &[0.0], &[0.0], 1e6).unwrap();
        assert!(out.gridlock);
        assert_eq!(s.n, 13_000.0);
        assert!(out.clamp_adjust < 0.0);
    }

    #[test]
    fn conservation_identity_single_step() {
        let p = plant(vec![gate(200.0, 2), gate(150.0, 0)], 10);
        let mut s = NetworkState::new(3000.0, vec![180.0, 20.0], &p.gates);
        let before = s.total_vehicles(p.period);
        let d = [900.0, 400.0];
        let out = p.step(&mut s, &[600.0, 1200.0], &d, 250.0).unwrap();
        let after = s.total_vehicles(p.period);
        let expect = p.period * (d.iter().sum::<f64>() + out.disturbance - out.exit_flow) + out.clamp_adjust;
        assert!((after - before - expect).abs() < 1e-9 * before);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let p = plant(vec![gate(200.0, 0)], 10);
        let mut s = NetworkState::new(3000.0, vec![0.0], &p.gates);
        assert!(matches!(
            p.step(&mut s, &[1.0, 2.0], &[0.0], 0.0),
            Err(Error::Dimension { .. })
        ));
        s.n = 20_000.0;
        assert!(matches!(p.step(&mut s, &[1.0], &[0.0], 0.0), Err(Error::Domain { .. })));
    }
}
