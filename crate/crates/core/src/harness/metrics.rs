//! Total time spent and relative queue balance over a closed-loop run.
//!
//! Sums run over every logged sample `k = 0..=K`, both endpoints included.
//! Splitting a trajectory at sample `m` into `0..m` and `m..=K` therefore
//! gives two parts whose metrics add up to the whole.

use crate::mpc::{Trajectory, TrajectoryRow};
use crate::plant::Gate;

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Network plus all queues (veh h).
    pub tts: f64,
    /// Protected network only (veh h).
    pub tts_pn: f64,
    /// Entrance-link plus virtual queue, per gate (veh h).
    pub tts_gates: Vec<f64>,
    /// Mean of `tts_gates`.
    pub tts_gates_avg: f64,
    /// Relative queue balance (veh).
    pub rqb: f64,
    /// Trip completions over the run (veh).
    pub served: f64,
    pub gridlock_events: usize,
    /// Periods in which `n` was clamped to `[0, n_max]`.
    pub clamp_events: usize,
    pub clip_events: usize,
    pub fallback_steps: usize,
    /// Relative vehicle-balance error of the run.
    pub conservation_error: f64,
}

/// `T * sum_k (n + sum l + sum v)`.
pub fn tts(rows: &[TrajectoryRow], period: f64) -> f64 {
    rows.iter()
        .map(|r| r.n + r.queues.iter().sum::<f64>() + r.virtual_queues.iter().sum::<f64>())
        .sum::<f64>()
        * period
}

pub fn tts_pn(rows: &[TrajectoryRow], period: f64) -> f64 {
    rows.iter().map(|r| r.n).sum::<f64>() * period
}

pub fn tts_gates(rows: &[TrajectoryRow], period: f64) -> Vec<f64> {
    let ng = rows.first().map_or(0, |r| r.queues.len());
    (0..ng)
        .map(|o| rows.iter().map(|r| r.queues[o] + r.virtual_queues[o]).sum::<f64>() * period)
        .collect()
}

/// `sum_k (sum_o l_o^2 / l_o,max + n^2 / n_max)`.
pub fn rqb(rows: &[TrajectoryRow], gates: &[Gate], n_max: f64) -> f64 {
    rows.iter()
        .map(|r| {
            let q: f64 = r.queues.iter().zip(gates).map(|(l, g)| l * l / g.storage).sum();
            q + r.n * r.n / n_max
        })
        .sum()
}

pub fn evaluate(traj: &Trajectory, gates: &[Gate], n_max: f64) -> RunMetrics {
    let t = traj.period;
    let per_gate = tts_gates(&traj.rows, t);
    let avg = if per_gate.is_empty() {
        0.0
    } else {
        per_gate.iter().sum::<f64>() / per_gate.len() as f64
    };
    RunMetrics {
        tts: tts(&traj.rows, t),
        tts_pn: tts_pn(&traj.rows, t),
        tts_gates_avg: avg,
        tts_gates: per_gate,
        rqb: rqb(&traj.rows, gates, n_max),
        served: traj.rows.iter().map(|r| r.exit_flow * t).sum(),
        gridlock_events: traj.gridlock_events(),
        clamp_events: traj.clamp_events(),
        clip_events: traj.diagnostics.iter().flatten().map(|d| d.clipped).sum(),
        fallback_steps: traj.fallback_steps(),
        conservation_error: traj.conservation_error(),
    }
}
