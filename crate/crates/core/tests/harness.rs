use perimeter::allocation::Policy;
use perimeter::harness::{
    compare_policies, dump_matrices, metrics, run_scenario, sweep_no, write_diagnostics, write_metrics, write_trajectory,
    Config,
};
use perimeter::mpc::Mgc;
use perimeter::qp::io::read_matrix;

fn header(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).lines().next().unwrap_or_default().to_string()
}

#[test]
fn identical_seed_gives_identical_metrics() {
    let cfg = Config::san_francisco();
    let s = cfg.scenario("n7000-high").unwrap();
    let a = run_scenario(&cfg, s, Policy::Mgc, Some(5)).unwrap();
    let b = run_scenario(&cfg, s, Policy::Mgc, Some(5)).unwrap();
    assert_eq!(a.metrics, b.metrics);

    let mut other = s.clone();
    other.seed += 1;
    let c = run_scenario(&cfg, &other, Policy::Mgc, Some(5)).unwrap();
    assert_ne!(a.metrics.tts, c.metrics.tts, "seed should reach the disturbance");
}

#[test]
fn tts_splits_at_a_shared_sample() {
    let cfg = Config::san_francisco();
    let s = cfg.scenario("n10000-medium").unwrap();
    let run = run_scenario(&cfg, s, Policy::Cap, None).unwrap();
    let rows = &run.trajectory.rows;
    let t = run.trajectory.period;
    let whole = metrics::tts(rows, t);
    for m in [1, 10, 20, rows.len() - 1] {
        let parts = metrics::tts(&rows[..m], t) + metrics::tts(&rows[m..], t);
        assert!((whole - parts).abs() < 1e-9 * whole, "split at {m}");
    }
}

#[test]
fn csv_schemas_are_fixed() {
    let cfg = Config::san_francisco();
    let s = cfg.scenario("n3000-none").unwrap();
    let run = run_scenario(&cfg, s, Policy::Mgc, Some(3)).unwrap();

    let mut traj = Vec::new();
    write_trajectory(&mut traj, &run.trajectory).unwrap();
    let h = header(&traj);
    let cols: Vec<&str> = h.split(',').collect();
    assert_eq!(cols.len(), 3 + 3 * 15 + 2 + 2 * 15);
    assert_eq!(&cols[..4], ["k", "t_hours", "n", "l_1"]);
    assert_eq!(cols[3 + 15], "v_1");
    assert_eq!(cols[3 + 30], "q_1");
    assert_eq!(&cols[48..50], ["d_n", "exit_flow"]);
    assert_eq!(String::from_utf8_lossy(&traj).lines().count(), 1 + 41);

    let mut diag = Vec::new();
    write_diagnostics(&mut diag, &run.trajectory).unwrap();
    assert_eq!(
        header(&diag),
        "k,status,iterations,stationarity,primal,complementarity,dual,active,fallback,clipped"
    );

    let rows = compare_policies(&cfg, std::slice::from_ref(s), &[Policy::None, Policy::Oap]);
    let mut table = Vec::new();
    write_metrics(&mut table, &rows).unwrap();
    assert_eq!(
        header(&table),
        "scenario,policy,N_o,tts_pn,tts_gates_avg,rqb,gridlock_events,tts_total,served_veh,clamp_events,clip_events,fallback_steps,conservation_err,best_no,error"
    );
}

#[test]
fn sweep_flags_one_best_horizon_per_scenario() {
    let cfg = Config::san_francisco();
    let scenarios = vec![cfg.scenario("n3000-none").unwrap().clone()];
    let rows = sweep_no(&cfg, &scenarios, &[1, 3]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().filter(|r| r.best_no).count(), 1);
    assert!(rows.iter().all(|r| r.error.is_none()));
}

#[test]
fn dumped_matrices_round_trip() {
    let cfg = Config::san_francisco();
    let dir = std::env::temp_dir().join(format!("perimeter-dump-{}", std::process::id()));
    let files = dump_matrices(&cfg, 4, &dir).unwrap();
    assert_eq!(files.len(), 10);
    let mut c = cfg.controller.clone();
    c.horizon = 4;
    let mgc = Mgc::new(&cfg.plant().unwrap(), &c).unwrap();
    let h = read_matrix(&dir.join("H.csv")).unwrap();
    assert_eq!(h.shape(), (60, 60));
    assert!((h - &mgc.condensed.h).amax() <= 1e-15 * mgc.condensed.h.amax());
    let l = read_matrix(&dir.join("L.csv")).unwrap();
    assert_eq!(l, mgc.condensed.l);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn missing_config_file_is_a_config_error() {
    let err = Config::load(std::path::Path::new("/nonexistent/perimeter.toml")).unwrap_err();
    assert_eq!(err.category(), perimeter::error::ErrorCategory::Config);
}
