//! CSV writers for trajectories, solver diagnostics and metric tables.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::mpc::Trajectory;

/// One row of a metrics table (sweep or policy comparison). Column order is
/// fixed by field order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub policy: String,
    #[serde(rename = "N_o")]
    pub horizon: usize,
    pub tts_pn: Option<f64>,
    pub tts_gates_avg: Option<f64>,
    pub rqb: Option<f64>,
    pub gridlock_events: Option<usize>,
    pub tts_total: Option<f64>,
    pub served_veh: Option<f64>,
    pub clamp_events: Option<usize>,
    pub clip_events: Option<usize>,
    pub fallback_steps: Option<usize>,
    pub conservation_err: Option<f64>,
    /// Lowest total TTS among the horizons of this scenario (sweep only).
    pub best_no: bool,
    pub error: Option<String>,
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `k, t_hours, n, l_*, v_*, q_*, d_n, exit_flow, cmd_*, g_*`: the state at
/// `k`, the flows released during the period ending at `k`, and the commands
/// and greens issued for that period.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ng = traj.rows.first().map_or(0, |r| r.queues.len());
    let mut header = vec!["k".to_string(), "t_hours".into(), "n".into()];
    for prefix in ["l", "v", "q"] {
        header.extend((1..=ng).map(|o| format!("{prefix}_{o}")));
    }
    header.push("d_n".into());
    header.push("exit_flow".into());
    for prefix in ["cmd", "g"] {
        header.extend((1..=ng).map(|o| format!("{prefix}_{o}")));
    }
    w.write_record(&header)?;
    for r in &traj.rows {
        let mut rec = vec![r.k.to_string(), (r.k as f64 * traj.period).to_string(), r.n.to_string()];
        for series in [&r.queues, &r.virtual_queues, &r.released] {
            rec.extend(series.iter().map(f64::to_string));
        }
        rec.push(r.disturbance.to_string());
        rec.push(r.exit_flow.to_string());
        for series in [&r.commands, &r.greens] {
            rec.extend(series.iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per controller period; controllers without a QP leave it empty.
pub fn write_diagnostics<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "status",
        "iterations",
        "stationarity",
        "primal",
        "complementarity",
        "dual",
        "active",
        "fallback",
        "clipped",
    ])?;
    for (k, d) in traj.diagnostics.iter().enumerate() {
        match d {
            Some(d) => w.write_record([
                k.to_string(),
                d.status.as_str().to_string(),
                d.iterations.to_string(),
                d.kkt.stationarity.to_string(),
                d.kkt.primal.to_string(),
                d.kkt.complementarity.to_string(),
                d.kkt.dual.to_string(),
                d.active.to_string(),
                d.fallback.to_string(),
                d.clipped.to_string(),
            ])?,
            None => {
                let mut rec = vec![String::new(); 10];
                rec[0] = k.to_string();
                rec[1] = "none".into();
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
