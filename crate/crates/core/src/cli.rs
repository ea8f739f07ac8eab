//! Command-line front end: `simulate`, `optimize`, `gradcheck`, `dp` and
//! `analyze-1a2t`, each emitting deterministic CSV artifacts plus a run
//! manifest into the chosen output directory.
//!
//! Exit codes: 0 success, 2 configuration problems, 3 numerical diagnostics
//! (singular guards), 4 resource budget exceeded.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::dp::{value_iteration, DpConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck, random_mission, RandomMissionOptions, DEFAULT_H_SCALE};
use crate::ipa::grad_j_traced;
use crate::optimizer::{descend, DescentConfig};
use crate::report::{self, fmt_f64, Emitter};
use crate::scenario::{load_scenario, MissionSpec};
use crate::sim::simulate;
use crate::theory;

#[derive(Parser)]
#[command(
    name = "patrolgrad",
    about = "Threshold-policy persistent monitoring: simulation, gradients, optimization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one exact event-driven simulation and export its artifacts.
    Simulate(SimulateArgs),
    /// Projected gradient descent on the threshold matrix.
    Optimize(OptimizeArgs),
    /// Compare the event-driven gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Discretized value-iteration baseline (single agent).
    Dp(DpArgs),
    /// One-agent-two-target cycle-map analysis and spectra.
    #[command(name = "analyze-1a2t")]
    Analyze1a2t(AnalyzeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Gradient-descent iterations.
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 1.0)]
    beta0: f64,
    #[arg(long, default_value_t = 0.6)]
    gamma: f64,
    /// Optional early stop on the max-norm threshold change.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also export every intermediate threshold matrix.
    #[arg(long)]
    theta_trace: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Mission to check; omit to generate a seeded random mission.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the random mission when no config is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step scale (h = scale * max(1, theta)).
    #[arg(long, default_value_t = DEFAULT_H_SCALE)]
    h: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also export the per-event sensitivity trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct DpArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    dr: f64,
    /// Optional global uncertainty cap.
    #[arg(long)]
    rmax: Option<f64>,
    /// Memory budget in bytes for the value/policy tables.
    #[arg(long, default_value_t = 1 << 30)]
    budget_bytes: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Homogeneous ratio rho = A/B.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    a1: Option<f64>,
    #[arg(long)]
    b1: Option<f64>,
    #[arg(long)]
    a2: Option<f64>,
    #[arg(long)]
    b2: Option<f64>,
    /// Ratio grid as start:end:step, e.g. 0.05:0.45:0.05.
    #[arg(long)]
    grid: Option<String>,
    /// Cycle-map iterations for the gradient trajectory.
    #[arg(long, default_value_t = 200)]
    cycles: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn init_worker_pool() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        if let Ok(threads) = std::env::var("PATROLGRAD_THREADS") {
            if let Ok(n) = threads.parse::<usize>() {
                if n > 0 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_worker_pool();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Dp(args) => cmd_dp(args),
        Command::Analyze1a2t(args) => cmd_analyze(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: &Path) -> Result<MissionSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    load_scenario(&text)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let started = Instant::now();
    let spec = load_config(&args.config)?;
    let result = simulate(&spec, &spec.theta0);
    let mut emitter = Emitter::new(&args.out_dir)?;
    emitter.emit("events.csv", &report::events_csv(&result))?;
    emitter.emit("trajectories.csv", &report::trajectories_csv(&result))?;
    let mut params = BTreeMap::new();
    params.insert("J".into(), fmt_f64(result.cost));
    emitter.finish_manifest(
        "simulate",
        Some(&args.config),
        params,
        started.elapsed().as_secs_f64(),
    )?;
    println!("J = {}", fmt_f64(result.cost));
    for (a, seq) in result.visits.iter().enumerate() {
        let pretty: Vec<String> = seq.iter().map(|n| (n + 1).to_string()).collect();
        println!("agent {} visits: {}", a + 1, pretty.join("-"));
    }
    Ok(0)
}

fn cmd_optimize(args: OptimizeArgs) -> Result<i32> {
    let started = Instant::now();
    let spec = load_config(&args.config)?;
    let cfg = DescentConfig {
        iterations: args.iters,
        beta0: args.beta0,
        gamma: args.gamma,
        tol: args.tol,
    };
    let trace = descend(&spec, &spec.theta0, &cfg)?;
    let mut emitter = Emitter::new(&args.out_dir)?;
    emitter.emit("cost_trace.csv", &report::cost_trace_csv(&trace))?;
    if let Some(theta) = trace.final_theta() {
        emitter.emit("theta_final.csv", &report::theta_csv(theta))?;
    }
    if args.theta_trace {
        emitter.emit("theta_trace.csv", &report::theta_trace_csv(&trace))?;
    }
    emitter.emit("visits.csv", &report::visits_csv(&trace))?;
    let mut params = BTreeMap::new();
    params.insert("iters".into(), args.iters.to_string());
    params.insert("beta0".into(), fmt_f64(args.beta0));
    params.insert("gamma".into(), fmt_f64(args.gamma));
    if let Some(tol) = args.tol {
        params.insert("tol".into(), fmt_f64(tol));
    }
    params.insert("J_initial".into(), fmt_f64(trace.initial_cost()));
    params.insert("J_final".into(), fmt_f64(trace.final_cost()));
    let diagnostic = trace.diagnostic.clone();
    emitter.finish_manifest(
        "optimize",
        Some(&args.config),
        params,
        started.elapsed().as_secs_f64(),
    )?;
    println!(
        "J: {} -> {} over {} iterates",
        fmt_f64(trace.initial_cost()),
        fmt_f64(trace.final_cost()),
        trace.iterates.len()
    );
    if let Some(diag) = diagnostic {
        eprintln!("aborted early: {diag}");
        return Ok(3);
    }
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let started = Instant::now();
    let spec = match &args.config {
        Some(path) => load_config(path)?,
        None => random_mission(args.seed, &RandomMissionOptions::default()),
    };
    let theta = spec.theta0.clone();
    let report_data = gradcheck(&spec, &theta, args.h)?;
    let grad = grad_j_traced(&spec, &theta, args.trace)?;
    let mut emitter = Emitter::new(&args.out_dir)?;
    emitter.emit("gradcheck.csv", &report::gradcheck_csv(&report_data))?;
    emitter.emit("gradient.csv", &report::gradient_csv(&grad))?;
    if let Some(rows) = &grad.trace {
        emitter.emit("grad_trace.csv", &report::grad_trace_csv(rows))?;
    }
    let mut params = BTreeMap::new();
    params.insert("h".into(), fmt_f64(args.h));
    if args.config.is_none() {
        params.insert("seed".into(), args.seed.to_string());
    }
    emitter.finish_manifest(
        "gradcheck",
        args.config.as_deref(),
        params,
        started.elapsed().as_secs_f64(),
    )?;
    println!(
        "checked {} entries: {} compared, {} flagged (event-sequence change), max rel err {}",
        report_data.rows.len(),
        report_data.compared_components(),
        report_data.flagged_components(),
        fmt_f64(report_data.max_rel_err())
    );
    Ok(0)
}

fn cmd_dp(args: DpArgs) -> Result<i32> {
    let started = Instant::now();
    let spec = load_config(&args.config)?;
    let cfg = DpConfig {
        dt: args.dt,
        dr: args.dr,
        r_max: args.rmax,
        budget_bytes: args.budget_bytes,
    };
    let result = value_iteration(&spec, &cfg)?;
    let mut emitter = Emitter::new(&args.out_dir)?;
    emitter.emit("dp_cost.txt", &report::dp_cost_txt(&result))?;
    emitter.emit("dp_policy_rollout.csv", &report::dp_rollout_csv(&result))?;
    let mut params = BTreeMap::new();
    params.insert("dt".into(), fmt_f64(args.dt));
    params.insert("dr".into(), fmt_f64(args.dr));
    if let Some(rmax) = args.rmax {
        params.insert("rmax".into(), fmt_f64(rmax));
    }
    emitter.finish_manifest(
        "dp",
        Some(&args.config),
        params,
        started.elapsed().as_secs_f64(),
    )?;
    println!(
        "J_dp = {} ({} states, {} sweeps); rollout continuous J = {}",
        fmt_f64(result.cost),
        result.state_count,
        result.sweeps,
        fmt_f64(result.rollout_cost_continuous)
    );
    Ok(0)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Validation(format!(
            "grid must be start:end:step, got {text}"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::Validation(format!("bad grid component {p}")))
        })
        .collect::<Result<_>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || end < start {
        return Err(Error::Validation(format!("bad grid range {text}")));
    }
    let mut grid = Vec::new();
    let mut rho = start;
    while rho <= end + 1e-12 {
        grid.push(rho);
        rho += step;
    }
    Ok(grid)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<i32> {
    let started = Instant::now();
    let mut emitter = Emitter::new(&args.out_dir)?;
    let mut params = BTreeMap::new();
    params.insert("cycles".into(), args.cycles.to_string());

    let hetero = [args.a1, args.b1, args.a2, args.b2];
    let map = if hetero.iter().all(|v| v.is_some()) {
        let (a1, b1, a2, b2) = (
            args.a1.unwrap(),
            args.b1.unwrap(),
            args.a2.unwrap(),
            args.b2.unwrap(),
        );
        params.insert("rates".into(), format!("A1={a1} B1={b1} A2={a2} B2={b2}"));
        Some(theory::build_cycle_map(a1, b1, a2, b2)?)
    } else if hetero.iter().any(|v| v.is_some()) {
        return Err(Error::Validation(
            "heterogeneous analysis needs all of --a1 --b1 --a2 --b2".into(),
        ));
    } else {
        None
    };

    // Spectral grid (homogeneous): explicit --grid, or the default sweep
    // when no specific map was requested.
    let grid = match (&args.grid, &map, args.rho) {
        (Some(text), _, _) => Some(parse_grid(text)?),
        (None, None, None) => Some(parse_grid("0.05:0.45:0.05")?),
        _ => None,
    };
    if let Some(grid) = &grid {
        params.insert(
            "grid".into(),
            args.grid.clone().unwrap_or_else(|| "0.05:0.45:0.05".into()),
        );
        let reports = theory::spectral_scan(grid)?;
        emitter.emit("spectral.csv", &report::spectral_csv(&reports))?;
        let critical = theory::critical_rho(0.45, 0.55, 1e-6)?;
        println!("critical rho (||lambda||_max = 1) = {}", fmt_f64(critical));
    }

    let map = match (map, args.rho) {
        (Some(m), _) => Some(m),
        (None, Some(rho)) => {
            params.insert("rho".into(), fmt_f64(rho));
            if grid.is_none() {
                let report_one = theory::spectral_report(rho)?;
                emitter.emit("spectral.csv", &report::spectral_csv(&[report_one]))?;
            }
            Some(theory::build_cycle_map(rho, 1.0, rho, 1.0)?)
        }
        (None, None) => None,
    };
    if let Some(map) = map {
        let run = theory::converge_gradients(&map, nalgebra::Vector4::zeros(), args.cycles);
        emitter.emit("grad_cycles.csv", &report::grad_cycles_csv(&run.trajectory))?;
        if run.diverged {
            println!("cycle iteration diverged (spectral radius above 1)");
        } else {
            match theory::equilibrium(&map) {
                Ok(eq) => println!(
                    "equilibrium: [{}, {}, {}, {}]",
                    fmt_f64(eq[0]),
                    fmt_f64(eq[1]),
                    fmt_f64(eq[2]),
                    fmt_f64(eq[3])
                ),
                Err(e) => println!("no unique equilibrium: {e}"),
            }
        }
    }

    emitter.finish_manifest("analyze-1a2t", None, params, started.elapsed().as_secs_f64())?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let grid = parse_grid("0.05:0.45:0.05").unwrap();
        assert_eq!(grid.len(), 9);
        assert!((grid[8] - 0.45).abs() < 1e-12);
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("0.5:0.1:0.1").is_err());
    }

    #[test]
    fn unknown_flag_exits_with_config_error() {
        let code = run(["patrolgrad", "simulate", "--bogus"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_config_file_exits_with_config_error() {
        let code = run([
            "patrolgrad",
            "simulate",
            "--config",
            "/nonexistent/mission.cfg",
        ]);
        assert_eq!(code, 2);
    }
}
