//! # Simulation harness
//!
//! Scenario-driven closed-loop runs: plan, optimize and track missions on
//! synthetic, image-based or randomly generated maps, with a constant
//! world-frame disturbance force and unknown obstacles revealed at run
//! time (each reveal triggers a replan from the current state). Also the
//! ablation benchmark runner and the reference-trajectory builders
//! (spiral, figure-eight) used by the tracking benchmarks.
//!
//! Metric files deliberately exclude wall-clock quantities so identical
//! scenario/seed pairs reproduce byte-identical JSON; timing is reported
//! in a separate structure.

use crate::planner::{self, PlanConfig, PlanFailure, PlanMetrics, Planner};
use crate::obvp::{solve_fixed_time, BoundaryState, QuinticSegment};
use crate::tracker::{self, NmpcConfig, Plant, ReferenceMode, TrackLog, TrackSample};
use crate::trajopt::PiecewiseTrajectory;
use crate::vessel::{rk4_step_forced, ControlInput, VesselParams, VesselState};
use crate::worldmap::{Obstacle, OccupancyGrid, SyntheticMap};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("map error: {0}")]
    Map(#[from] crate::worldmap::WorldError),
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

/// Map source of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSource {
    /// Inline synthetic obstacle list.
    Synthetic(SyntheticMap),
    /// PGM image plus resolution/origin.
    Pgm {
        path: String,
        resolution: f64,
        #[serde(default)]
        origin: [f64; 2],
    },
    /// Randomly scattered circular obstacles at a target density.
    Random {
        width_m: f64,
        height_m: f64,
        resolution: f64,
        /// Occupied area fraction before inflation.
        density: f64,
        /// Number of maps for benchmark sweeps.
        #[serde(default = "one")]
        count: usize,
    },
}

fn one() -> usize {
    1
}

/// Pose entry in a scenario file.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PoseSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub psi: f64,
    #[serde(default)]
    pub u: f64,
    #[serde(default)]
    pub v: f64,
    #[serde(default)]
    pub r: f64,
}

impl PoseSpec {
    pub fn state(&self) -> VesselState {
        VesselState::new(self.x, self.y, self.psi, self.u, self.v, self.r)
    }
}

/// Constant world-frame disturbance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct Disturbance {
    #[serde(default)]
    pub force: [f64; 2],
    #[serde(default)]
    pub yaw_torque: f64,
}

/// Obstacle revealed during the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnknownObstacle {
    pub reveal_time: f64,
    #[serde(flatten)]
    pub shape: Obstacle,
}

/// Reference trajectory request for tracking-only runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    Spiral {
        #[serde(default = "default_speed")]
        speed: f64,
        #[serde(default = "default_r0")]
        r0: f64,
        #[serde(default = "default_growth")]
        growth: f64,
        #[serde(default = "default_turns")]
        turns: f64,
    },
    FigureEight {
        #[serde(default = "default_speed")]
        speed: f64,
        #[serde(default = "default_a")]
        half_width: f64,
        #[serde(default = "default_b")]
        half_height: f64,
        #[serde(default = "default_laps")]
        laps: f64,
    },
}

fn default_speed() -> f64 {
    1.5
}
fn default_r0() -> f64 {
    4.0
}
fn default_growth() -> f64 {
    0.8
}
fn default_turns() -> f64 {
    3.0
}
fn default_a() -> f64 {
    12.0
}
fn default_b() -> f64 {
    8.0
}
fn default_laps() -> f64 {
    1.0
}

/// A full scenario description (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub map: MapSource,
    pub start: PoseSpec,
    pub goal: PoseSpec,
    #[serde(default)]
    pub vessel: Option<VesselParams>,
    #[serde(default)]
    pub disturbance: Disturbance,
    #[serde(default)]
    pub unknown_obstacles: Vec<UnknownObstacle>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trial_count: usize,
    #[serde(default = "default_budget")]
    pub plan_budget_ms: u64,
    #[serde(default = "default_inflation")]
    pub inflation_radius: f64,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
    #[serde(default)]
    pub planner: Option<PlanConfig>,
    #[serde(default)]
    pub tracker: Option<NmpcConfig>,
}

fn default_budget() -> u64 {
    100
}
fn default_inflation() -> f64 {
    0.8
}

impl Scenario {
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn params(&self) -> VesselParams {
        self.vessel.unwrap_or_default()
    }

    pub fn plan_config(&self) -> PlanConfig {
        let mut cfg = self.planner.clone().unwrap_or_default();
        cfg.rng_seed = self.seed;
        cfg.time_budget_ms = cfg.time_budget_ms.max(self.plan_budget_ms);
        cfg.inflation_radius = self.inflation_radius;
        cfg
    }

    pub fn nmpc_config(&self) -> NmpcConfig {
        self.tracker
            .clone()
            .unwrap_or_else(|| NmpcConfig::default().with_bounds(&self.params()))
    }

    /// Builds the known-obstacle grid, inflated.
    pub fn build_grid(&self, map_index: usize) -> Result<OccupancyGrid, HarnessError> {
        let raw = match &self.map {
            MapSource::Synthetic(spec) => OccupancyGrid::from_synthetic(spec),
            MapSource::Pgm {
                path,
                resolution,
                origin,
            } => OccupancyGrid::from_pgm_file(
                path,
                *resolution,
                Vector2::new(origin[0], origin[1]),
            )?,
            MapSource::Random {
                width_m,
                height_m,
                resolution,
                density,
                ..
            } => random_map(
                *width_m,
                *height_m,
                *resolution,
                *density,
                self.seed.wrapping_add(map_index as u64),
                &[self.start.state().position(), self.goal.state().position()],
            ),
        };
        Ok(raw.inflate(self.inflation_radius))
    }

    pub fn map_count(&self) -> usize {
        match &self.map {
            MapSource::Random { count, .. } => (*count).max(1),
            _ => 1,
        }
    }
}

/// Randomly scattered circular obstacles at a target pre-inflation
/// density, keeping clearance discs around the given points.
pub fn random_map(
    width_m: f64,
    height_m: f64,
    resolution: f64,
    density: f64,
    seed: u64,
    keep_clear: &[Vector2<f64>],
) -> OccupancyGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec_area = width_m * height_m;
    let mut placed_area = 0.0;
    let mut obstacles = Vec::new();
    let clear_radius = 4.0;
    let mut attempts = 0;
    while placed_area < density * spec_area && attempts < 10_000 {
        attempts += 1;
        let r = rng.gen_range(0.6..2.2);
        let c = Vector2::new(
            rng.gen_range(r..width_m - r),
            rng.gen_range(r..height_m - r),
        );
        if keep_clear.iter().any(|p| (p - c).norm() < clear_radius + r) {
            continue;
        }
        obstacles.push(Obstacle::Circle {
            center: [c.x, c.y],
            radius: r,
        });
        placed_area += std::f64::consts::PI * r * r;
    }
    OccupancyGrid::from_synthetic(&SyntheticMap {
        width_m,
        height_m,
        resolution,
        origin: [0.0, 0.0],
        obstacles,
    })
}

/// RK4 plant stepping at a fine internal step with the constant
/// world-frame disturbance rotated into the body frame.
pub struct SimPlant {
    pub state: VesselState,
    pub params: VesselParams,
    pub dt: f64,
    pub disturbance: Disturbance,
}

impl SimPlant {
    pub fn new(state: VesselState, params: VesselParams, disturbance: Disturbance) -> Self {
        Self {
            state,
            params,
            dt: 1e-3,
            disturbance,
        }
    }
}

impl Plant for SimPlant {
    fn state(&self) -> VesselState {
        self.state
    }

    fn apply(&mut self, input: ControlInput, period: f64) {
        let steps = (period / self.dt).round().max(1.0) as usize;
        let step = period / steps as f64;
        let f_world = Vector2::new(self.disturbance.force[0], self.disturbance.force[1]);
        for _ in 0..steps {
            let (s, c) = self.state.psi.sin_cos();
            // World force into the body frame.
            let f_body = Vector2::new(
                c * f_world.x + s * f_world.y,
                -s * f_world.x + c * f_world.y,
            );
            let tau = Vector3::new(
                input.tau_u + f_body.x,
                f_body.y,
                input.tau_r + self.disturbance.yaw_torque,
            );
            self.state = rk4_step_forced(&self.state, &tau, step, &self.params);
        }
    }
}

/// Table-style tracking quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub mean_error: f64,
    pub max_error: f64,
    pub mean_vel: f64,
    pub max_vel: f64,
    pub ang_vel_integral: f64,
}

impl TrackMetrics {
    pub fn from_log(log: &TrackLog, period: f64) -> Self {
        let mut sum_err = 0.0;
        let mut max_err: f64 = 0.0;
        let mut sum_vel = 0.0;
        let mut max_vel: f64 = 0.0;
        let mut ang = 0.0;
        for s in &log.samples {
            let e = ((s.state.x - s.reference.x).powi(2) + (s.state.y - s.reference.y).powi(2))
                .sqrt();
            sum_err += e;
            max_err = max_err.max(e);
            let v = s.state.world_velocity().norm();
            sum_vel += v;
            max_vel = max_vel.max(v);
            ang += s.state.r * s.state.r * period;
        }
        let n = log.samples.len().max(1) as f64;
        Self {
            mean_error: sum_err / n,
            max_error: max_err,
            mean_vel: sum_vel / n,
            max_vel,
            ang_vel_integral: ang,
        }
    }

    /// Recomputes the metrics from a written CSV log (schema of
    /// [`TrackLog::write_csv`]).
    pub fn from_csv<R: std::io::Read>(reader: R, period: f64) -> Result<Self, HarnessError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut log = TrackLog::default();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| HarnessError::Parse(e.to_string()))?;
            let f = |i: usize| -> Result<f64, HarnessError> {
                rec.get(i)
                    .ok_or_else(|| HarnessError::Parse("short row".into()))?
                    .parse()
                    .map_err(|e| HarnessError::Parse(format!("bad number: {e}")))
            };
            log.samples.push(TrackSample {
                t: f(0)?,
                state: VesselState::new(f(1)?, f(2)?, f(3)?, f(4)?, f(5)?, f(6)?),
                reference: VesselState::new(f(7)?, f(8)?, f(9)?, 0.0, 0.0, 0.0),
                input: ControlInput::new(f(10)?, f(11)?),
                solve_ms: f(12)?,
                flagged: false,
            });
        }
        Ok(Self::from_log(&log, period))
    }
}

/// Outcome of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimOutcome {
    Completed,
    PlanFailure(PlanFailure),
    /// Tracking error exceeded the safety cutoff at the given time.
    TrackAbort { t: f64, error: f64 },
}

/// Artifacts of one simulated mission.
#[derive(Debug, Clone)]
pub struct SimArtifacts {
    pub outcome: SimOutcome,
    pub plan_metrics: PlanMetrics,
    pub track_log: TrackLog,
    pub track_metrics: TrackMetrics,
    /// Simulation times at which replans were triggered.
    pub replan_events: Vec<f64>,
    /// The final trajectory that was being tracked.
    pub trajectory: Option<PiecewiseTrajectory>,
}

const CONTROL_RATE: f64 = 100.0;
const SAFETY_CUTOFF: f64 = 5.0;
const REVEAL_DISTANCE: f64 = 20.0;

/// Runs the full plan -> optimize -> track loop of a scenario on one map.
pub fn simulate(sc: &Scenario) -> Result<SimArtifacts, HarnessError> {
    let params = sc.params();
    let grid = sc.build_grid(0)?;
    let cfg = sc.plan_config();
    let nmpc = sc.nmpc_config().with_bounds(&params);
    let start = sc.start.state();
    let goal = sc.goal.state();

    let mut planner = match Planner::new(grid.clone(), &params, &start, &goal, cfg) {
        Ok(p) => p,
        Err(f) => {
            return Ok(SimArtifacts {
                outcome: SimOutcome::PlanFailure(f.clone()),
                plan_metrics: failed_metrics(f),
                track_log: TrackLog::default(),
                track_metrics: TrackMetrics::from_log(&TrackLog::default(), 1.0 / CONTROL_RATE),
                replan_events: Vec::new(),
                trajectory: None,
            })
        }
    };
    let first = planner.run();
    let Some(mut traj) = first.trajectory.clone() else {
        return Ok(SimArtifacts {
            outcome: SimOutcome::PlanFailure(
                first.metrics.failure.clone().unwrap_or(PlanFailure::Timeout),
            ),
            plan_metrics: first.metrics,
            track_log: TrackLog::default(),
            track_metrics: TrackMetrics::from_log(&TrackLog::default(), 1.0 / CONTROL_RATE),
            replan_events: Vec::new(),
            trajectory: None,
        });
    };

    let mut plant = SimPlant::new(start, params, sc.disturbance);
    let mut base_grid = grid;
    let mut pending: Vec<UnknownObstacle> = sc.unknown_obstacles.clone();
    let period = 1.0 / CONTROL_RATE;
    let mut log = TrackLog::default();
    let mut replan_events = Vec::new();
    let mut warm: Option<tracker::NmpcSolution> = None;
    let mut last_input = ControlInput::default();
    let mut last_heading = start.psi;
    let mut t_traj = 0.0;
    let mut sim_t = 0.0;
    let mut outcome = SimOutcome::Completed;
    let max_ticks = ((traj.duration() * 6.0 + 120.0) * CONTROL_RATE) as usize;

    for _ in 0..max_ticks {
        if t_traj >= traj.duration() {
            break;
        }
        let state = plant.state();

        // Reveal unknown obstacles within range.
        let mut revealed = false;
        pending.retain(|ob| {
            let center = match ob.shape {
                Obstacle::Circle { center, .. } => Vector2::new(center[0], center[1]),
                Obstacle::Rect { min, max } => {
                    Vector2::new(0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1]))
                }
            };
            let due = sim_t >= ob.reveal_time
                && (center - state.position()).norm() <= REVEAL_DISTANCE;
            if due {
                base_grid.stamp(&ob.shape);
                revealed = true;
            }
            !due
        });
        if revealed {
            let new_grid = base_grid.inflate(sc.inflation_radius);
            planner.update_environment(new_grid);
            if planner.replan_from(&state).is_ok() {
                let res = planner.run();
                if let Some(new_traj) = res.trajectory {
                    traj = new_traj;
                    t_traj = 0.0;
                    warm = None;
                    replan_events.push(sim_t);
                } else {
                    outcome = SimOutcome::PlanFailure(
                        res.metrics.failure.unwrap_or(PlanFailure::Timeout),
                    );
                    break;
                }
            } else {
                outcome = SimOutcome::PlanFailure(PlanFailure::NoPath);
                break;
            }
        }

        let tick = tracker::control_tick(
            &traj,
            t_traj,
            &state,
            &nmpc,
            &params,
            ReferenceMode::FlatFeedforward,
            &mut warm,
            last_input,
            &mut last_heading,
            period,
        );
        plant.apply(tick.input, period);
        last_input = tick.input;
        let err = ((state.x - tick.reference.x).powi(2) + (state.y - tick.reference.y).powi(2))
            .sqrt();
        log.samples.push(TrackSample {
            t: sim_t,
            state,
            reference: tick.reference,
            input: tick.input,
            solve_ms: tick.solve_ms,
            flagged: tick.flagged,
        });
        if err > SAFETY_CUTOFF {
            outcome = SimOutcome::TrackAbort { t: sim_t, error: err };
            break;
        }
        t_traj += period;
        sim_t += period;
    }

    let track_metrics = TrackMetrics::from_log(&log, period);
    Ok(SimArtifacts {
        outcome,
        plan_metrics: first.metrics,
        track_log: log,
        track_metrics,
        replan_events,
        trajectory: Some(traj),
    })
}

fn failed_metrics(f: PlanFailure) -> PlanMetrics {
    PlanMetrics {
        traj_length: 0.0,
        traj_time: 0.0,
        traj_cost: 0.0,
        node_utilization: 0.0,
        algo_time_ms: 0.0,
        success: false,
        failure: Some(f),
        iterations: 0,
        first_solution_iteration: None,
        samples: 0,
        nodes: 0,
        corridor_fallbacks: 0,
    }
}

/// Planner ablation variants of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Baseline,
    LocalOnly,
    GlobalOnly,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Baseline,
        Ablation::LocalOnly,
        Ablation::GlobalOnly,
        Ablation::Full,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::LocalOnly => "+local",
            Ablation::GlobalOnly => "+global",
            Ablation::Full => "full",
        }
    }

    pub fn apply(&self, cfg: &mut PlanConfig) {
        let (local, global) = match self {
            Ablation::Baseline => (false, false),
            Ablation::LocalOnly => (true, false),
            Ablation::GlobalOnly => (false, true),
            Ablation::Full => (true, true),
        };
        cfg.enable_local_repair = local;
        cfg.enable_global_opt = global;
    }

    pub fn parse(s: &str) -> Option<Ablation> {
        match s {
            "baseline" => Some(Ablation::Baseline),
            "+local" | "local" | "local_only" => Some(Ablation::LocalOnly),
            "+global" | "global" | "global_only" => Some(Ablation::GlobalOnly),
            "full" | "proposed" => Some(Ablation::Full),
            _ => None,
        }
    }
}

/// Aggregated deterministic quantities of one ablation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub ablation: String,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_traj_length: f64,
    pub mean_traj_time: f64,
    pub mean_traj_cost: f64,
    pub mean_node_utilization: f64,
}

/// Wall-clock quantities of one ablation row (reported separately so the
/// metric file stays reproducible).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTimingRow {
    pub ablation: String,
    pub mean_algo_time_ms: f64,
    pub success_within_budget_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTiming {
    pub rows: Vec<BenchTimingRow>,
}

/// Runs `trial_count` plans per map per ablation and aggregates.
pub fn bench(
    sc: &Scenario,
    ablations: &[Ablation],
) -> Result<(BenchReport, BenchTiming), HarnessError> {
    let params = sc.params();
    let start = sc.start.state();
    let goal = sc.goal.state();
    let budget_ms = sc.plan_budget_ms as f64;
    let mut rows = Vec::new();
    let mut timing_rows = Vec::new();
    let maps: Vec<OccupancyGrid> = (0..sc.map_count())
        .map(|i| sc.build_grid(i))
        .collect::<Result<_, _>>()?;
    for &ab in ablations {
        let mut successes = 0usize;
        let mut within_budget = 0usize;
        let mut sums = [0.0f64; 5]; // length, time, cost, util, algo_ms
        let mut trials = 0usize;
        for (map_idx, grid) in maps.iter().enumerate() {
            for trial in 0..sc.trial_count {
                trials += 1;
                let mut cfg = sc.plan_config();
                ab.apply(&mut cfg);
                cfg.rng_seed = sc
                    .seed
                    .wrapping_add((map_idx * sc.trial_count + trial) as u64)
                    .wrapping_mul(0x9E37_79B9)
                    .wrapping_add(1);
                let result = planner::plan(grid, &params, &start, &goal, &cfg);
                sums[3] += result.metrics.node_utilization;
                sums[4] += result.metrics.algo_time_ms;
                if result.metrics.success {
                    successes += 1;
                    sums[0] += result.metrics.traj_length;
                    sums[1] += result.metrics.traj_time;
                    sums[2] += result.metrics.traj_cost;
                    if result.metrics.algo_time_ms <= budget_ms {
                        within_budget += 1;
                    }
                }
            }
        }
        let n = trials.max(1) as f64;
        let ns = successes.max(1) as f64;
        rows.push(BenchRow {
            ablation: ab.label().to_string(),
            trials,
            success_rate: successes as f64 / n,
            mean_traj_length: sums[0] / ns,
            mean_traj_time: sums[1] / ns,
            mean_traj_cost: sums[2] / ns,
            mean_node_utilization: sums[3] / n,
        });
        timing_rows.push(BenchTimingRow {
            ablation: ab.label().to_string(),
            mean_algo_time_ms: sums[4] / n,
            success_within_budget_rate: within_budget as f64 / n,
        });
    }
    Ok((BenchReport { rows }, BenchTiming { rows: timing_rows }))
}

/// Writes a benchmark report as CSV.
pub fn write_bench_csv<W: std::io::Write>(
    report: &BenchReport,
    timing: &BenchTiming,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "ablation",
        "trials",
        "success_rate",
        "mean_traj_length",
        "mean_traj_time",
        "mean_traj_cost",
        "mean_node_utilization",
        "mean_algo_time_ms",
        "success_within_budget_rate",
    ])?;
    for (r, t) in report.rows.iter().zip(&timing.rows) {
        w.write_record([
            r.ablation.clone(),
            r.trials.to_string(),
            format!("{:.6}", r.success_rate),
            format!("{:.6}", r.mean_traj_length),
            format!("{:.6}", r.mean_traj_time),
            format!("{:.6}", r.mean_traj_cost),
            format!("{:.6}", r.mean_node_utilization),
            format!("{:.6}", t.mean_algo_time_ms),
            format!("{:.6}", t.success_within_budget_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Builds a constant-speed piecewise-quintic reference along a parametric
/// curve, `seg_dt` seconds per segment.
fn constant_speed_reference(
    pos: impl Fn(f64) -> Vector2<f64>,
    d1: impl Fn(f64) -> Vector2<f64>,
    d2: impl Fn(f64) -> Vector2<f64>,
    phi_end: f64,
    speed: f64,
    seg_dt: f64,
) -> PiecewiseTrajectory {
    // Integrate phi(t) at fine resolution: phi_dot = speed / |d1(phi)|.
    let dt = 1e-3;
    let mut phi = 0.0;
    let mut knots: Vec<(f64, f64)> = vec![(0.0, 0.0)]; // (t, phi)
    let mut t = 0.0;
    while phi < phi_end {
        // Midpoint rule on the parameter speed.
        let g1 = d1(phi).norm().max(1e-9);
        let phi_mid = phi + 0.5 * dt * speed / g1;
        let g_mid = d1(phi_mid).norm().max(1e-9);
        phi += dt * speed / g_mid;
        t += dt;
        knots.push((t, phi));
    }
    // Boundary state at a parameter value.
    let boundary = |phi: f64| -> BoundaryState {
        let g = d1(phi);
        let gn = g.norm().max(1e-9);
        let phi_dot = speed / gn;
        // phi_ddot from d/dt (speed / g(phi)).
        let gp = (g.dot(&d2(phi))) / gn;
        let phi_ddot = -speed * gp * phi_dot / (gn * gn);
        BoundaryState::new(
            pos(phi),
            g * phi_dot,
            d2(phi) * (phi_dot * phi_dot) + g * phi_ddot,
        )
    };
    let mut segments: Vec<QuinticSegment> = Vec::new();
    let total_t = knots.last().unwrap().0;
    let n_seg = (total_t / seg_dt).ceil().max(1.0) as usize;
    let mut prev_phi = 0.0;
    for k in 1..=n_seg {
        let target_t = total_t * k as f64 / n_seg as f64;
        let idx = knots.partition_point(|&(kt, _)| kt < target_t);
        let phi_k = knots[idx.min(knots.len() - 1)].1;
        let duration = total_t / n_seg as f64;
        let s0 = boundary(prev_phi);
        let s1 = boundary(phi_k);
        segments.push(
            solve_fixed_time(&s0, &s1, duration, 0.0).expect("positive segment duration"),
        );
        prev_phi = phi_k;
    }
    PiecewiseTrajectory::new(segments)
}

/// Archimedean spiral reference, `r = r0 + growth * phi`, at constant
/// speed.
pub fn spiral_reference(
    center: Vector2<f64>,
    r0: f64,
    growth: f64,
    turns: f64,
    speed: f64,
) -> PiecewiseTrajectory {
    let pos = move |phi: f64| {
        let r = r0 + growth * phi;
        center + r * Vector2::new(phi.cos(), phi.sin())
    };
    let d1 = move |phi: f64| {
        let r = r0 + growth * phi;
        let (s, c) = phi.sin_cos();
        // d/dphi of (r cos, r sin) with r' = growth
        Vector2::new(growth * c - r * s, growth * s + r * c)
    };
    let d2 = move |phi: f64| {
        let r = r0 + growth * phi;
        let (s, c) = phi.sin_cos();
        Vector2::new(
            -2.0 * growth * s - r * c,
            2.0 * growth * c - r * s,
        )
    };
    constant_speed_reference(pos, d1, d2, turns * 2.0 * std::f64::consts::PI, speed, 2.0)
}

/// Figure-eight (Gerono lemniscate) reference at constant speed.
pub fn figure_eight_reference(
    center: Vector2<f64>,
    half_width: f64,
    half_height: f64,
    laps: f64,
    speed: f64,
) -> PiecewiseTrajectory {
    let a = half_width;
    let b = half_height;
    let pos = move |phi: f64| center + Vector2::new(a * phi.sin(), b * phi.sin() * phi.cos());
    let d1 = move |phi: f64| Vector2::new(a * phi.cos(), b * (2.0 * phi).cos());
    let d2 = move |phi: f64| Vector2::new(-a * phi.sin(), -2.0 * b * (2.0 * phi).sin());
    constant_speed_reference(pos, d1, d2, laps * 2.0 * std::f64::consts::PI, speed, 2.0)
}

impl ReferenceSpec {
    /// Materializes the reference trajectory around a center point.
    pub fn build(&self, center: Vector2<f64>) -> PiecewiseTrajectory {
        match *self {
            ReferenceSpec::Spiral {
                speed,
                r0,
                growth,
                turns,
            } => spiral_reference(center, r0, growth, turns, speed),
            ReferenceSpec::FigureEight {
                speed,
                half_width,
                half_height,
                laps,
            } => figure_eight_reference(center, half_width, half_height, laps, speed),
        }
    }
}

/// Tracking-only run of a reference trajectory (no planning), returning
/// the log and metrics.
pub fn track_reference(
    traj: &PiecewiseTrajectory,
    params: &VesselParams,
    nmpc: &NmpcConfig,
    disturbance: Disturbance,
    mode: ReferenceMode,
) -> (TrackLog, TrackMetrics) {
    let f0 = traj.sample(0.0);
    let start = crate::flatness::flat_to_state(&f0, params)
        .unwrap_or_else(|_| {
            let p = traj.position(0.0);
            VesselState::at_pose(p.x, p.y, 0.0)
        });
    let mut plant = SimPlant::new(start, *params, disturbance);
    let log = tracker::track(traj, &mut plant, nmpc, params, CONTROL_RATE, mode);
    let metrics = TrackMetrics::from_log(&log, 1.0 / CONTROL_RATE);
    (log, metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn empty_scenario() -> Scenario {
        Scenario {
            name: "test".into(),
            map: MapSource::Synthetic(SyntheticMap {
                width_m: 40.0,
                height_m: 40.0,
                resolution: 0.2,
                origin: [0.0, 0.0],
                obstacles: vec![],
            }),
            start: PoseSpec {
                x: 5.0,
                y: 20.0,
                ..Default::default()
            },
            goal: PoseSpec {
                x: 30.0,
                y: 20.0,
                ..Default::default()
            },
            vessel: None,
            disturbance: Disturbance::default(),
            unknown_obstacles: vec![],
            seed: 1,
            trial_count: 1,
            plan_budget_ms: 2000,
            inflation_radius: 0.8,
            reference: None,
            planner: None,
            tracker: None,
        }
    }

    #[test]
    fn straight_mission_tracks_tightly() {
        let sc = empty_scenario();
        let art = simulate(&sc).unwrap();
        assert_eq!(art.outcome, SimOutcome::Completed);
        assert!(
            art.track_metrics.mean_error < 0.05,
            "mean error {}",
            art.track_metrics.mean_error
        );
    }

    #[test]
    fn disturbance_increases_error_monotonically() {
        let calm = simulate(&empty_scenario()).unwrap();
        let mut windy = empty_scenario();
        windy.disturbance = Disturbance {
            force: [20.0, 0.0],
            yaw_torque: 0.0,
        };
        let stormy = simulate(&windy).unwrap();
        assert!(
            stormy.track_metrics.mean_error > calm.track_metrics.mean_error,
            "disturbed error {} not above calm {}",
            stormy.track_metrics.mean_error,
            calm.track_metrics.mean_error
        );
    }

    #[test]
    fn unknown_obstacle_triggers_replan() {
        let mut sc = empty_scenario();
        sc.unknown_obstacles = vec![UnknownObstacle {
            reveal_time: 0.0,
            shape: Obstacle::Circle {
                center: [17.0, 20.0],
                radius: 1.5,
            },
        }];
        let art = simulate(&sc).unwrap();
        assert_eq!(art.outcome, SimOutcome::Completed, "{:?}", art.outcome);
        assert!(!art.replan_events.is_empty(), "no replan events logged");
        // Final trajectory avoids the revealed obstacle.
        let final_traj = art.trajectory.unwrap();
        let mut grid = sc.build_grid(0).unwrap();
        grid.stamp(&sc.unknown_obstacles[0].shape);
        let grid = grid.inflate(sc.inflation_radius);
        let report = grid.trajectory_free(&final_traj, 0.05);
        assert!(report.free, "replanned trajectory still collides");
    }

    #[test]
    fn metrics_csv_round_trip() {
        let sc = empty_scenario();
        let art = simulate(&sc).unwrap();
        let mut buf = Vec::new();
        art.track_log.write_csv(&mut buf).unwrap();
        let re = TrackMetrics::from_csv(buf.as_slice(), 0.01).unwrap();
        assert_relative_eq!(re.mean_error, art.track_metrics.mean_error, epsilon = 1e-6);
        assert_relative_eq!(re.max_error, art.track_metrics.max_error, epsilon = 1e-6);
        assert_relative_eq!(
            re.ang_vel_integral,
            art.track_metrics.ang_vel_integral,
            epsilon = 1e-6
        );
    }

    #[test]
    fn simulate_is_deterministic() {
        let sc = empty_scenario();
        let a = simulate(&sc).unwrap();
        let b = simulate(&sc).unwrap();
        let ja = serde_json::to_string(&a.track_metrics).unwrap();
        let jb = serde_json::to_string(&b.track_metrics).unwrap();
        assert_eq!(ja, jb);
        let pa = serde_json::to_string(&a.plan_metrics).unwrap();
        let pb = serde_json::to_string(&b.plan_metrics).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn spiral_reference_is_constant_speed() {
        let traj = spiral_reference(Vector2::new(0.0, 0.0), 4.0, 0.8, 2.0, 1.5);
        let mut min_v = f64::INFINITY;
        let mut max_v: f64 = 0.0;
        let n = 500;
        for k in 0..=n {
            let t = traj.duration() * k as f64 / n as f64;
            let v = traj.velocity(t).norm();
            min_v = min_v.min(v);
            max_v = max_v.max(v);
        }
        assert!(max_v <= 2.0, "speed {max_v} above the benchmark bound");
        assert!(min_v > 0.5, "speed collapsed to {min_v}");
        assert!((max_v - min_v) < 0.5, "speed ripple {min_v}..{max_v}");
    }

    #[test]
    fn figure_eight_reference_shape() {
        let traj = figure_eight_reference(Vector2::new(30.0, 30.0), 12.0, 8.0, 1.0, 1.5);
        // Passes through the center crossing twice per lap.
        let mut near_center = 0;
        let n = 2000;
        let mut was_near = false;
        for k in 0..=n {
            let t = traj.duration() * k as f64 / n as f64;
            let d = (traj.position(t) - Vector2::new(30.0, 30.0)).norm();
            let near = d < 0.7;
            if near && !was_near {
                near_center += 1;
            }
            was_near = near;
        }
        assert!(near_center >= 2, "center crossings: {near_center}");
    }

    #[test]
    fn bench_single_trial_rows() {
        let mut sc = empty_scenario();
        sc.trial_count = 1;
        let (report, timing) = bench(&sc, &[Ablation::Baseline, Ablation::Full]).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(timing.rows.len(), 2);
        for row in &report.rows {
            assert!(row.success_rate == 0.0 || row.success_rate == 1.0);
            assert!(row.trials == 1);
        }
    }

    #[test]
    fn scenario_toml_round_trip() {
        let sc = empty_scenario();
        let text = toml::to_string(&sc).unwrap();
        let back: Scenario = toml::from_str(&text).unwrap();
        assert_eq!(back.start.x, sc.start.x);
        assert_eq!(back.seed, sc.seed);
        assert_eq!(back.map_count(), 1);
    }
}
