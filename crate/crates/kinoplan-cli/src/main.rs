//! Scenario-driven command line for the kinoplan stack.
//!
//! Subcommands: `plan`, `track`, `simulate`, `identify`, `bench`. All
//! outputs are plain CSV/JSON; metric JSON files contain no wall-clock
//! quantities (timing goes to `*_timing.json`), so a fixed `--seed`
//! reproduces them byte for byte. The output directory defaults to `out/`,
//! overridable with `-o` or the `KINOPLAN_OUT` environment variable.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kinoplan::harness::{self, Ablation, Scenario, SimOutcome};
use kinoplan::planner;
use kinoplan::sysid::{estimate, IdentProblem, MotionLog};
use kinoplan::tracker::ReferenceMode;
use kinoplan::vessel::VesselParams;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_PLAN_FAILURE: u8 = 2;
const EXIT_BAD_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "kinoplan", version, about = "Vessel trajectory planning, optimization and NMPC tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the scenario RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the planning budget in milliseconds.
    #[arg(long, global = true)]
    budget_ms: Option<u64>,
    /// Vessel parameter file (TOML) overriding the scenario's vessel table.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OutDir {
    /// Output directory (also settable via KINOPLAN_OUT).
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

impl OutDir {
    fn resolve(&self) -> Result<PathBuf> {
        let dir = std::env::var_os("KINOPLAN_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out.clone());
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Plan a trajectory for a scenario and write it with its metrics.
    Plan {
        scenario: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Track the scenario's reference trajectory (no planning).
    Track {
        scenario: PathBuf,
        /// Position-only references instead of flatness feedforward.
        #[arg(long)]
        no_df: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Full closed-loop mission: plan, track, replan on reveals.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Estimate hydrodynamic parameters from a motion log CSV.
    Identify {
        log: PathBuf,
        /// Output parameter JSON path.
        #[arg(short, long, default_value = "params.json")]
        out: PathBuf,
    },
    /// Run the planner ablation benchmark of a scenario.
    Bench {
        scenario: PathBuf,
        /// `baseline`, `+local`, `+global`, `full`, or `all`.
        #[arg(long, default_value = "all")]
        ablation: String,
        #[command(flatten)]
        out: OutDir,
    },
}

fn load_scenario(path: &Path, cli: &Cli) -> Result<Scenario> {
    let mut sc = Scenario::from_file(path)
        .with_context(|| format!("loading scenario {}", path.display()))?;
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    if let Some(budget) = cli.budget_ms {
        sc.plan_budget_ms = budget;
    }
    if let Some(cfg) = &cli.config {
        let params = VesselParams::from_file(cfg)
            .with_context(|| format!("loading vessel config {}", cfg.display()))?;
        sc.vessel = Some(params);
    }
    Ok(sc)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_plan(sc: &Scenario, out: &Path) -> Result<u8> {
    let params = sc.params();
    let grid = sc.build_grid(0)?;
    let cfg = sc.plan_config();
    let result = planner::plan(&grid, &params, &sc.start.state(), &sc.goal.state(), &cfg);
    write_json(&out.join("plan_metrics.json"), &result.metrics)?;
    write_json(
        &out.join("plan_timing.json"),
        &serde_json::json!({ "algo_time_ms": result.metrics.algo_time_ms }),
    )?;
    match &result.trajectory {
        Some(traj) => {
            let file = std::fs::File::create(out.join("trajectory.csv"))?;
            traj.write_csv(file, 0.05)?;
            write_json(&out.join("trajectory_coeffs.json"), traj)?;
            println!(
                "plan: success, {} segments, length {:.1} m, duration {:.1} s, cost {:.2}",
                traj.segments().len(),
                result.metrics.traj_length,
                result.metrics.traj_time,
                result.metrics.traj_cost
            );
            Ok(0)
        }
        None => {
            eprintln!("plan failed: {:?}", result.metrics.failure);
            Ok(EXIT_PLAN_FAILURE)
        }
    }
}

fn cmd_track(sc: &Scenario, no_df: bool, out: &Path) -> Result<u8> {
    let params = sc.params();
    let Some(reference) = &sc.reference else {
        eprintln!("scenario has no [reference] section for `track`");
        return Ok(EXIT_BAD_INPUT);
    };
    let center = sc.start.state().position();
    let traj = reference.build(center);
    let nmpc = sc.nmpc_config().with_bounds(&params);
    let mode = if no_df {
        ReferenceMode::PositionOnly
    } else {
        ReferenceMode::FlatFeedforward
    };
    let (log, metrics) = harness::track_reference(&traj, &params, &nmpc, sc.disturbance, mode);
    let file = std::fs::File::create(out.join("track_log.csv"))?;
    log.write_csv(file)?;
    write_json(&out.join("track_metrics.json"), &metrics)?;
    println!(
        "track: mean error {:.3} m, max {:.3} m, ang-vel integral {:.3}",
        metrics.mean_error, metrics.max_error, metrics.ang_vel_integral
    );
    Ok(0)
}

fn cmd_simulate(sc: &Scenario, out: &Path) -> Result<u8> {
    let art = harness::simulate(sc)?;
    let file = std::fs::File::create(out.join("track_log.csv"))?;
    art.track_log.write_csv(file)?;
    write_json(&out.join("plan_metrics.json"), &art.plan_metrics)?;
    write_json(&out.join("track_metrics.json"), &art.track_metrics)?;
    write_json(
        &out.join("sim_summary.json"),
        &serde_json::json!({
            "outcome": art.outcome,
            "replan_events": art.replan_events,
        }),
    )?;
    if let Some(traj) = &art.trajectory {
        let file = std::fs::File::create(out.join("trajectory.csv"))?;
        traj.write_csv(file, 0.05)?;
    }
    match art.outcome {
        SimOutcome::Completed => {
            println!(
                "simulate: completed, mean error {:.3} m, max {:.3} m, {} replans",
                art.track_metrics.mean_error,
                art.track_metrics.max_error,
                art.replan_events.len()
            );
            Ok(0)
        }
        SimOutcome::PlanFailure(f) => {
            eprintln!("simulate: plan failure: {f}");
            Ok(EXIT_PLAN_FAILURE)
        }
        SimOutcome::TrackAbort { t, error } => {
            eprintln!("simulate: track abort at t={t:.2}s (error {error:.2} m)");
            Ok(EXIT_PLAN_FAILURE)
        }
    }
}

fn cmd_identify(log_path: &Path, out: &Path) -> Result<u8> {
    let log = match MotionLog::from_csv_file(log_path) {
        Ok(l) => l.smoothed(5),
        Err(e) => {
            eprintln!("identify: cannot read log: {e}");
            return Ok(EXIT_BAD_INPUT);
        }
    };
    let base = VesselParams::default();
    let h_init = 0.7 * base.hydro_vector();
    let mut prob = IdentProblem::new(log, h_init);
    prob.base_params = base;
    match estimate(&prob) {
        Ok(result) => {
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            write_json(
                out,
                &serde_json::json!({
                    "m1": result.h_hat[0],
                    "m2": result.h_hat[1],
                    "d1": result.h_hat[2],
                    "d2": result.h_hat[3],
                    "d3": result.h_hat[4],
                    "final_cost": result.final_cost,
                    "iterations": result.iterations,
                }),
            )?;
            println!(
                "identify: h = [{:.4}, {:.4}, {:.4}, {:.4}, {:.4}] in {} iterations",
                result.h_hat[0],
                result.h_hat[1],
                result.h_hat[2],
                result.h_hat[3],
                result.h_hat[4],
                result.iterations
            );
            Ok(0)
        }
        Err(e) => {
            eprintln!("identify failed: {e}");
            Ok(EXIT_BAD_INPUT)
        }
    }
}

fn cmd_bench(sc: &Scenario, ablation: &str, out: &Path) -> Result<u8> {
    let ablations: Vec<Ablation> = if ablation == "all" {
        Ablation::ALL.to_vec()
    } else {
        match Ablation::parse(ablation) {
            Some(a) => vec![a],
            None => {
                eprintln!("unknown ablation {ablation:?}; use baseline, +local, +global, full, all");
                return Ok(EXIT_BAD_INPUT);
            }
        }
    };
    let (report, timing) = harness::bench(sc, &ablations)?;
    write_json(&out.join("bench_metrics.json"), &report)?;
    write_json(&out.join("bench_timing.json"), &timing)?;
    let file = std::fs::File::create(out.join("bench.csv"))?;
    harness::write_bench_csv(&report, &timing, file)?;
    for (row, t) in report.rows.iter().zip(&timing.rows) {
        println!(
            "{:>9}: success {:>5.1}%, node util {:>5.1}%, cost {:>8.2}, time {:>7.1} ms",
            row.ablation,
            100.0 * row.success_rate,
            100.0 * row.mean_node_utilization,
            row.mean_traj_cost,
            t.mean_algo_time_ms
        );
    }
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Plan { scenario, out } => {
            let sc = load_scenario(scenario, cli)?;
            cmd_plan(&sc, &out.resolve()?)
        }
        Command::Track {
            scenario,
            no_df,
            out,
        } => {
            let sc = load_scenario(scenario, cli)?;
            cmd_track(&sc, *no_df, &out.resolve()?)
        }
        Command::Simulate { scenario, out } => {
            let sc = load_scenario(scenario, cli)?;
            cmd_simulate(&sc, &out.resolve()?)
        }
        Command::Identify { log, out } => cmd_identify(log, out),
        Command::Bench {
            scenario,
            ablation,
            out,
        } => {
            let sc = load_scenario(scenario, cli)?;
            cmd_bench(&sc, ablation, &out.resolve()?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage errors exit 3; --help/--version exit 0.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(EXIT_BAD_INPUT);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_BAD_INPUT)
        }
    }
}
