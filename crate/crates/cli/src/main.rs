use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use perimeter::allocation::Policy;
use perimeter::error::{Error, ErrorCategory};
use perimeter::harness::{
    compare_policies, dump_matrices, metrics_row, run_scenario, stable_spread, sweep_no, write_diagnostics, write_metrics,
    write_trajectory, Config, MetricsRow, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "perimeter", version, about = "Multi-gated perimeter control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). The bundled San Francisco set is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Override the disturbance seed of every selected scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trajectory, diagnostics and metrics.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
        /// mgc | cap | oap | none (defaults to the scenario's policy).
        #[arg(long)]
        policy: Option<Policy>,
        /// Optimisation horizon N_o.
        #[arg(long)]
        no: Option<usize>,
    },
    /// Run the MGC horizon sweep over the configured scenarios.
    SweepNo {
        #[command(flatten)]
        common: Common,
        /// Restrict to one scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Comma-separated horizons (defaults to the configured list).
        #[arg(long, value_delimiter = ',')]
        no: Vec<usize>,
    },
    /// Run every scenario under each policy.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
        /// Comma-separated policies (defaults to all four).
        #[arg(long, value_delimiter = ',')]
        policy: Vec<Policy>,
        #[arg(long)]
        no: Option<usize>,
    },
    /// Write the MGC prediction and QP matrices as CSV.
    DumpMatrices {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no: Option<usize>,
    },
}

/// Exit codes by error category; 2 is left to clap for usage errors.
fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 3,
        ErrorCategory::Solver => 4,
        ErrorCategory::Model => 5,
        ErrorCategory::Io => 6,
    }
}

fn load(common: &Common) -> perimeter::error::Result<Config> {
    match &common.config {
        Some(p) => Config::load(p),
        None => Ok(Config::san_francisco()),
    }
}

fn select(cfg: &Config, name: Option<&str>, seed: Option<u64>) -> perimeter::error::Result<Vec<ScenarioConfig>> {
    let mut out = match name {
        Some(n) => vec![cfg.scenario(n)?.clone()],
        None => cfg.scenarios.clone(),
    };
    if let Some(s) = seed {
        out.iter_mut().for_each(|sc| sc.seed = s);
    }
    Ok(out)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(Error::from).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn with_horizon(mut cfg: Config, no: Option<usize>) -> perimeter::error::Result<Config> {
    if let Some(n) = no {
        cfg.controller.horizon = n;
        cfg.controller.validate()?;
    }
    Ok(cfg)
}

fn failed_cells(rows: &[MetricsRow]) -> usize {
    rows.iter().filter(|r| r.error.is_some()).count()
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Simulate { common, scenario, policy, no } => {
            let cfg = with_horizon(load(&common)?, no)?;
            let sc = select(&cfg, Some(&scenario), common.seed)?.remove(0);
            let policy = policy.unwrap_or(sc.policy);
            let res = run_scenario(&cfg, &sc, policy, None)?;
            let row = metrics_row(&sc.name, policy, res.horizon, Ok(res.clone()));
            let stem = format!("{}_{}", sc.name, policy);
            write_trajectory(create(&common.out_dir, &format!("{stem}_trajectory.csv"))?, &res.trajectory)?;
            write_diagnostics(create(&common.out_dir, &format!("{stem}_diagnostics.csv"))?, &res.trajectory)?;
            write_metrics(create(&common.out_dir, &format!("{stem}_metrics.csv"))?, &[row])?;
            let m = &res.metrics;
            println!(
                "{} {} N_o={}: tts={:.2} tts_pn={:.2} tts_gates_avg={:.3} rqb={:.1} gridlock={} conservation_err={:.2e}",
                sc.name,
                policy,
                res.horizon,
                m.tts,
                m.tts_pn,
                m.tts_gates_avg,
                m.rqb,
                m.gridlock_events,
                res.trajectory.conservation_error()
            );
        }
        Cmd::SweepNo { common, scenario, no } => {
            let cfg = load(&common)?;
            let scenarios = select(&cfg, scenario.as_deref(), common.seed)?;
            let horizons = if no.is_empty() { cfg.sweep.horizons.clone() } else { no };
            let rows = sweep_no(&cfg, &scenarios, &horizons);
            write_metrics(create(&common.out_dir, "sweep_no.csv")?, &rows)?;
            for sc in &scenarios {
                match stable_spread(&rows, &sc.name, cfg.sweep.stable_from) {
                    Some(s) => println!(
                        "{}: TTS spread for N_o >= {} is {:.2}% (tolerance {:.0}%)",
                        sc.name,
                        cfg.sweep.stable_from,
                        100.0 * s,
                        100.0 * cfg.sweep.tolerance
                    ),
                    None => println!("{}: no successful runs with N_o >= {}", sc.name, cfg.sweep.stable_from),
                }
            }
            let failed = failed_cells(&rows);
            if failed > 0 {
                eprintln!("{failed} of {} sweep cells failed; see the error column", rows.len());
            }
        }
        Cmd::Compare { common, scenario, policy, no } => {
            let cfg = with_horizon(load(&common)?, no)?;
            let scenarios = select(&cfg, scenario.as_deref(), common.seed)?;
            let policies = if policy.is_empty() { Policy::ALL.to_vec() } else { policy };
            let rows = compare_policies(&cfg, &scenarios, &policies);
            write_metrics(create(&common.out_dir, "compare.csv")?, &rows)?;
            for r in &rows {
                match (&r.error, r.tts_gates_avg) {
                    (None, Some(g)) => println!("{:<16} {:<5} tts_gates_avg={g:.3}", r.scenario, r.policy),
                    (Some(e), _) => println!("{:<16} {:<5} error: {e}", r.scenario, r.policy),
                    _ => {}
                }
            }
            let failed = failed_cells(&rows);
            if failed > 0 {
                eprintln!("{failed} of {} runs failed; see the error column", rows.len());
            }
        }
        Cmd::DumpMatrices { common, no } => {
            let cfg = load(&common)?;
            let n = no.unwrap_or(cfg.controller.horizon);
            let files = dump_matrices(&cfg, n, &common.out_dir)?;
            println!("wrote {} to {}", files.join(", "), common.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .map_or(1, |err| exit_code(err.category()));
            ExitCode::from(code)
        }
    }
}
