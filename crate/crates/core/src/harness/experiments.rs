//! Horizon sensitivity sweep, policy comparison and matrix dumps.

use std::path::Path;

use crate::allocation::Policy;
use crate::error::Result;
use crate::mpc::Mgc;
use crate::qp::io::write_matrix;

use super::config::{Config, ScenarioConfig};
use super::output::MetricsRow;
use super::scenario::{run_scenario, RunResult};

/// Metrics-table row for one run; a failed run keeps only its error text.
pub fn metrics_row(scenario: &str, policy: Policy, horizon: usize, result: Result<RunResult>) -> MetricsRow {
    let mut row = MetricsRow {
        scenario: scenario.to_string(),
        policy: policy.to_string(),
        horizon,
        tts_pn: None,
        tts_gates_avg: None,
        rqb: None,
        gridlock_events: None,
        tts_total: None,
        served_veh: None,
        clamp_events: None,
        clip_events: None,
        fallback_steps: None,
        conservation_err: None,
        best_no: false,
        error: None,
    };
    match result {
        Ok(r) => {
            let m = r.metrics;
            row.tts_pn = Some(m.tts_pn);
            row.tts_gates_avg = Some(m.tts_gates_avg);
            row.rqb = Some(m.rqb);
            row.gridlock_events = Some(m.gridlock_events);
            row.tts_total = Some(m.tts);
            row.served_veh = Some(m.served);
            row.clamp_events = Some(m.clamp_events);
            row.clip_events = Some(m.clip_events);
            row.fallback_steps = Some(m.fallback_steps);
            row.conservation_err = Some(m.conservation_error);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every scenario under MGC for every horizon. Failed cells carry the
/// error text and the sweep continues. The lowest-TTS horizon of each
/// scenario is flagged.
pub fn sweep_no(cfg: &Config, scenarios: &[ScenarioConfig], horizons: &[usize]) -> Vec<MetricsRow> {
    let mut rows = Vec::with_capacity(scenarios.len() * horizons.len());
    for s in scenarios {
        let start = rows.len();
        for &n in horizons {
            rows.push(metrics_row(&s.name, Policy::Mgc, n, run_scenario(cfg, s, Policy::Mgc, Some(n))));
        }
        let best = rows[start..]
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.tts_total.map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = best {
            rows[start + i].best_no = true;
        }
    }
    rows
}

/// Relative TTS spread `(max - min) / min` among the rows of `scenario` with
/// `N_o >= stable_from`. `None` when fewer than one such row succeeded.
pub fn stable_spread(rows: &[MetricsRow], scenario: &str, stable_from: usize) -> Option<f64> {
    let tts: Vec<f64> = rows
        .iter()
        .filter(|r| r.scenario == scenario && r.horizon >= stable_from)
        .filter_map(|r| r.tts_total)
        .collect();
    let lo = tts.iter().copied().reduce(f64::min)?;
    let hi = tts.iter().copied().reduce(f64::max)?;
    Some((hi - lo) / lo.max(f64::MIN_POSITIVE))
}

/// Every scenario under every policy at the configured horizon.
pub fn compare_policies(cfg: &Config, scenarios: &[ScenarioConfig], policies: &[Policy]) -> Vec<MetricsRow> {
    let n = cfg.controller.horizon;
    let mut rows = Vec::with_capacity(scenarios.len() * policies.len());
    for s in scenarios {
        for &p in policies {
            rows.push(metrics_row(&s.name, p, n, run_scenario(cfg, s, p, None)));
        }
    }
    rows
}

/// Writes the MGC prediction and QP matrices for `horizon` to `dir`, one CSV
/// per matrix. Returns the written file names.
pub fn dump_matrices(cfg: &Config, horizon: usize, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let plant = cfg.plant()?;
    let mut controller = cfg.controller.clone();
    controller.horizon = horizon;
    let mgc = Mgc::new(&plant, &controller)?;
    let cq = &mgc.condensed;
    let mats = [
        ("A", &mgc.model.a),
        ("B", &mgc.model.b),
        ("C", &mgc.model.c),
        ("Phi", &cq.phi),
        ("Gamma", &cq.gamma),
        ("Z", &cq.z),
        ("H", &cq.h),
        ("F", &cq.f),
        ("G", &cq.g),
        ("L", &cq.l),
    ];
    let mut names = Vec::new();
    for (name, m) in mats {
        let file = format!("{name}.csv");
        write_matrix(&dir.join(&file), m)?;
        names.push(file);
    }
    Ok(names)
}
