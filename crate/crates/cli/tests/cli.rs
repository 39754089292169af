use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_perimeter"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("perimeter-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_writes_three_tables() {
    let dir = scratch("simulate");
    let out = bin()
        .args(["simulate", "--scenario", "n3000-none", "--policy", "cap", "--seed", "3", "--out-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for suffix in ["trajectory", "diagnostics", "metrics"] {
        let path = dir.join(format!("n3000-none_cap_{suffix}.csv"));
        assert!(path.exists(), "{}", path.display());
    }
    let metrics = std::fs::read_to_string(dir.join("n3000-none_cap_metrics.csv")).unwrap();
    assert!(metrics.starts_with("scenario,policy,N_o,tts_pn,tts_gates_avg,rqb,gridlock_events"));
    assert_eq!(metrics.lines().count(), 2);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn dump_matrices_honours_horizon() {
    let dir = scratch("dump");
    let out = bin().args(["dump-matrices", "--no", "2", "--out-dir"]).arg(&dir).output().unwrap();
    assert!(out.status.success());
    let h = std::fs::read_to_string(dir.join("H.csv")).unwrap();
    assert_eq!(h.lines().count(), 30);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn config_errors_exit_with_code_three() {
    let out = bin().args(["simulate", "--scenario", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    let out = bin()
        .args(["compare", "--config", "/nonexistent/cfg.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = scratch("badcfg");
    let path = dir.join("bad.toml");
    let text = perimeter::harness::config::SAN_FRANCISCO_TOML.replacen("q_min = 900.0", "q_min = -1.0", 1);
    std::fs::write(&path, text).unwrap();
    let out = bin().args(["dump-matrices", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q_min"));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn unknown_policy_is_a_usage_error() {
    let out = bin()
        .args(["simulate", "--scenario", "n3000-none", "--policy", "fastest"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
