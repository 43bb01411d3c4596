//! # NMPC tracking
//!
//! Receding-horizon tracking of flat trajectories. Each tick solves
//!
//! ```text
//! min  sum_{i=1..N} e_i' Q e_i + sum_{i=0..N-1} (u_i - u_i_ref)' R (u_i - u_i_ref)
//! s.t. x_{i+1} = f_RK4(x_i, u_i, dt),  u_min <= u_i <= u_max
//! ```
//!
//! with `e_i = x_i - x_i_ref` (heading error wrapped). The SQP iteration
//! linearizes the RK4 dynamics along a single-shooting rollout, condenses
//! the state deviations onto the input moves, and solves the resulting
//! box-constrained quadratic program with a primal active-set loop; a
//! halving line search guards each step. Warm starts shift the previous
//! solution by one step, which makes a single iteration per tick viable
//! (real-time iteration).
//!
//! Reference windows come from the differential-flatness maps (states and
//! feedforward inputs). The `--no-df` ablation replaces them with
//! position-only references (heading from finite differences, zero
//! velocities) and zero feedforward.

use crate::flatness::{self, FlatnessError};
use crate::trajopt::PiecewiseTrajectory;
use crate::vessel::{
    rk4_jacobians, rk4_step, wrap_angle_diff, ControlInput, VesselParams, VesselState,
};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// NMPC tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmpcConfig {
    /// Horizon steps.
    pub horizon: usize,
    /// Shooting step (s).
    pub dt: f64,
    /// Diagonal of the state-error weight.
    pub q_diag: [f64; 6],
    /// Diagonal of the input weight.
    pub r_diag: [f64; 2],
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub max_sqp_iters: usize,
    pub kkt_tol: f64,
    /// When set, a tick whose solve exceeds the loop period re-applies the
    /// previous input instead (soft real-time). Off by default so that
    /// simulated runs stay bit-reproducible.
    pub enforce_deadline: bool,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            q_diag: [10.0, 10.0, 5.0, 1.0, 1.0, 1.0],
            // Inputs are Newton-scale; weights above ~1e-3 per N^2 make
            // the feedback too weak to hold the benchmark error bounds.
            r_diag: [1e-4, 1e-4],
            u_min: [-60.0, -40.0],
            u_max: [120.0, 40.0],
            max_sqp_iters: 4,
            kkt_tol: 1e-6,
            enforce_deadline: false,
        }
    }
}

impl NmpcConfig {
    pub fn with_bounds(mut self, p: &VesselParams) -> Self {
        self.u_min = p.u_min;
        self.u_max = p.u_max;
        self
    }

    fn q(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from_column_slice(&self.q_diag))
    }

    fn r(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&nalgebra::Vector2::from_column_slice(&self.r_diag))
    }
}

/// Reference states and feedforward inputs over one horizon.
#[derive(Debug, Clone)]
pub struct ReferenceWindow {
    /// `N + 1` states.
    pub states: Vec<VesselState>,
    /// `N` feedforward inputs.
    pub inputs: Vec<ControlInput>,
}

impl ReferenceWindow {
    pub fn validate(&self, horizon: usize) -> bool {
        self.states.len() == horizon + 1 && self.inputs.len() == horizon
    }
}

/// Solution of one tick.
#[derive(Debug, Clone)]
pub struct NmpcSolution {
    pub inputs: Vec<ControlInput>,
    pub predicted_states: Vec<VesselState>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

fn state_error(x: &VesselState, r: &VesselState) -> Vector6<f64> {
    let mut e = x.as_vector() - r.as_vector();
    e[2] = wrap_angle_diff(x.psi, r.psi);
    e
}

fn rollout(
    x0: &VesselState,
    inputs: &[ControlInput],
    dt: f64,
    p: &VesselParams,
) -> Vec<VesselState> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    for u in inputs {
        let next = rk4_step(states.last().unwrap(), u, dt, p).expect("dt > 0");
        states.push(next);
    }
    states
}

fn tracking_cost(states: &[VesselState], inputs: &[ControlInput], rw: &ReferenceWindow, cfg: &NmpcConfig) -> f64 {
    let q = cfg.q();
    let r = cfg.r();
    let mut cost = 0.0;
    for i in 1..states.len() {
        let e = state_error(&states[i], &rw.states[i]);
        cost += (e.transpose() * q * e)[0];
    }
    for i in 0..inputs.len() {
        let du = inputs[i].as_vector() - rw.inputs[i].as_vector();
        cost += (du.transpose() * r * du)[0];
    }
    cost
}

/// Box-constrained QP `min 1/2 d' H d + g' d, lo <= d <= hi` by a primal
/// active-set loop with multiplier release.
fn solve_box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    #[derive(Clone, Copy, PartialEq)]
    enum Status {
        Free,
        Lower,
        Upper,
    }
    let mut status = vec![Status::Free; n];
    let mut d = DVector::<f64>::zeros(n);
    for _ in 0..50 {
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == Status::Free).collect();
        for i in 0..n {
            d[i] = match status[i] {
                Status::Lower => lo[i],
                Status::Upper => hi[i],
                Status::Free => 0.0,
            };
        }
        if !free.is_empty() {
            let nf = free.len();
            let mut h_ff = DMatrix::<f64>::zeros(nf, nf);
            let mut rhs = DVector::<f64>::zeros(nf);
            for (r_i, &i) in free.iter().enumerate() {
                let mut v = -g[i];
                for j in 0..n {
                    if status[j] != Status::Free {
                        v -= h[(i, j)] * d[j];
                    }
                }
                rhs[r_i] = v;
                for (c_i, &j) in free.iter().enumerate() {
                    h_ff[(r_i, c_i)] = h[(i, j)];
                }
            }
            if let Some(chol) = h_ff.cholesky() {
                let sol = chol.solve(&rhs);
                for (r_i, &i) in free.iter().enumerate() {
                    d[i] = sol[r_i];
                }
            }
        }
        // Clamp primal violations into the active set.
        let mut changed = false;
        for i in 0..n {
            if status[i] == Status::Free {
                if d[i] < lo[i] - 1e-12 {
                    status[i] = Status::Lower;
                    changed = true;
                } else if d[i] > hi[i] + 1e-12 {
                    status[i] = Status::Upper;
                    changed = true;
                }
            }
        }
        if changed {
            continue;
        }
        // Release active constraints with wrong-sign multipliers.
        let grad = h * &d + g;
        let mut released = false;
        for i in 0..n {
            match status[i] {
                Status::Lower if grad[i] < -1e-10 => {
                    status[i] = Status::Free;
                    released = true;
                }
                Status::Upper if grad[i] > 1e-10 => {
                    status[i] = Status::Free;
                    released = true;
                }
                _ => {}
            }
        }
        if !released {
            break;
        }
    }
    // Final safety clamp.
    for i in 0..n {
        d[i] = d[i].clamp(lo[i], hi[i]);
    }
    d
}

/// Solves one NMPC tick by SQP on error coordinates.
pub fn solve(
    x0: &VesselState,
    rw: &ReferenceWindow,
    cfg: &NmpcConfig,
    params: &VesselParams,
    warm: Option<&NmpcSolution>,
) -> NmpcSolution {
    let n = cfg.horizon;
    assert!(rw.validate(n), "reference window sized for the horizon");
    let q = cfg.q();
    let r = cfg.r();

    // Nominal inputs: shifted warm start or the reference feedforward.
    let clamp_u = |u: ControlInput| ControlInput::new(
        u.tau_u.clamp(cfg.u_min[0], cfg.u_max[0]),
        u.tau_r.clamp(cfg.u_min[1], cfg.u_max[1]),
    );
    let mut inputs: Vec<ControlInput> = match warm {
        Some(w) if w.inputs.len() == n => {
            let mut shifted: Vec<ControlInput> = w.inputs[1..].to_vec();
            shifted.push(*w.inputs.last().unwrap());
            shifted.into_iter().map(clamp_u).collect()
        }
        _ => rw.inputs.iter().map(|&u| clamp_u(u)).collect(),
    };
    let mut states = rollout(x0, &inputs, cfg.dt, params);
    let mut cost = tracking_cost(&states, &inputs, rw, cfg);

    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let max_iters = if warm.is_some() {
        cfg.max_sqp_iters.min(2)
    } else {
        cfg.max_sqp_iters
    };
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        // Condense: delta_x_{i+1} = A_i delta_x_i + B_i delta_u_i.
        let nu = 2 * n;
        let mut h = DMatrix::<f64>::zeros(nu, nu);
        let mut g = DVector::<f64>::zeros(nu);
        let mut gamma = DMatrix::<f64>::zeros(6, nu);
        for i in 0..n {
            let (a, b) = rk4_jacobians(&states[i], &inputs[i], cfg.dt, params);
            // gamma <- A_i gamma; column block i <- B_i.
            gamma = DMatrix::from_fn(6, nu, |r_i, c_i| {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += a[(r_i, k)] * gamma[(k, c_i)];
                }
                acc
            });
            for r_i in 0..6 {
                for c_i in 0..2 {
                    gamma[(r_i, 2 * i + c_i)] += b[(r_i, c_i)];
                }
            }
            let e = state_error(&states[i + 1], &rw.states[i + 1]);
            // H += gamma' Q gamma; g += gamma' Q e.
            let qg = DMatrix::from_fn(6, nu, |r_i, c_i| {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += q[(r_i, k)] * gamma[(k, c_i)];
                }
                acc
            });
            h.gemm_tr(1.0, &gamma, &qg, 1.0);
            let qe = q * e;
            for c_i in 0..nu {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += gamma[(k, c_i)] * qe[k];
                }
                g[c_i] += acc;
            }
        }
        for i in 0..n {
            let du = inputs[i].as_vector() - rw.inputs[i].as_vector();
            for a_i in 0..2 {
                for b_i in 0..2 {
                    h[(2 * i + a_i, 2 * i + b_i)] += r[(a_i, b_i)];
                }
                g[2 * i + a_i] += (r * du)[a_i];
            }
        }

        // KKT: projected gradient at the current iterate.
        let mut proj = g.clone();
        for i in 0..n {
            for c_i in 0..2 {
                let idx = 2 * i + c_i;
                let u_val = if c_i == 0 { inputs[i].tau_u } else { inputs[i].tau_r };
                let at_lower = (u_val - cfg.u_min[c_i]).abs() < 1e-12 && g[idx] > 0.0;
                let at_upper = (u_val - cfg.u_max[c_i]).abs() < 1e-12 && g[idx] < 0.0;
                if at_lower || at_upper {
                    proj[idx] = 0.0;
                }
            }
        }
        kkt = proj.norm();
        if kkt < cfg.kkt_tol {
            break;
        }

        let mut lo = DVector::<f64>::zeros(nu);
        let mut hi = DVector::<f64>::zeros(nu);
        for i in 0..n {
            lo[2 * i] = cfg.u_min[0] - inputs[i].tau_u;
            hi[2 * i] = cfg.u_max[0] - inputs[i].tau_u;
            lo[2 * i + 1] = cfg.u_min[1] - inputs[i].tau_r;
            hi[2 * i + 1] = cfg.u_max[1] - inputs[i].tau_r;
        }
        let delta = solve_box_qp(&h, &g, &lo, &hi);

        // Halving line search on the true cost.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let trial: Vec<ControlInput> = (0..n)
                .map(|i| {
                    clamp_u(ControlInput::new(
                        inputs[i].tau_u + alpha * delta[2 * i],
                        inputs[i].tau_r + alpha * delta[2 * i + 1],
                    ))
                })
                .collect();
            let trial_states = rollout(x0, &trial, cfg.dt, params);
            let trial_cost = tracking_cost(&trial_states, &trial, rw, cfg);
            if trial_cost <= cost {
                inputs = trial;
                states = trial_states;
                cost = trial_cost;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }

    NmpcSolution {
        inputs,
        predicted_states: states,
        kkt_residual: kkt,
        iterations,
    }
}

/// Plant interface for the closed control loop: read the state, apply an
/// input for a control period.
pub trait Plant {
    fn state(&self) -> VesselState;
    fn apply(&mut self, input: ControlInput, period: f64);
}

/// Reference construction mode for the tracking loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Flatness states and feedforward inputs.
    FlatFeedforward,
    /// Position-only references: heading from finite differences, zero
    /// velocities, zero feedforward.
    PositionOnly,
}

/// One logged control tick.
#[derive(Debug, Clone)]
pub struct TrackSample {
    pub t: f64,
    pub state: VesselState,
    pub reference: VesselState,
    pub input: ControlInput,
    pub solve_ms: f64,
    pub flagged: bool,
}

/// Closed-loop tracking log.
#[derive(Debug, Clone, Default)]
pub struct TrackLog {
    pub samples: Vec<TrackSample>,
}

impl TrackLog {
    /// Writes `t,x,y,psi,u,v,r,x_ref,y_ref,psi_ref,tau_u,tau_r,solve_ms`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t", "x", "y", "psi", "u", "v", "r", "x_ref", "y_ref", "psi_ref", "tau_u", "tau_r",
            "solve_ms",
        ])?;
        for s in &self.samples {
            w.write_record(
                [
                    s.t,
                    s.state.x,
                    s.state.y,
                    s.state.psi,
                    s.state.u,
                    s.state.v,
                    s.state.r,
                    s.reference.x,
                    s.reference.y,
                    s.reference.psi,
                    s.input.tau_u,
                    s.input.tau_r,
                    s.solve_ms,
                ]
                .map(|v| format!("{v:.9}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the reference window starting at time `t0`. Samples beyond the
/// trajectory end, or below the flat speed floor at the trajectory end,
/// become rest references at the terminal position (the tracker, not the
/// flat map, handles endpoints at rest).
fn reference_window(
    traj: &PiecewiseTrajectory,
    t0: f64,
    cfg: &NmpcConfig,
    params: &VesselParams,
    mode: ReferenceMode,
    last_heading: f64,
) -> Result<ReferenceWindow, FlatnessError> {
    let n = cfg.horizon;
    let duration = traj.duration();
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    let mut heading = last_heading;
    let end_eps = 10.0 * cfg.dt;
    // Terminal continuation: hold at rest for rest endpoints, otherwise
    // extrapolate the terminal state at constant velocity.
    let end_flat = traj.sample(duration);
    let end_moving = end_flat.dz.norm() >= flatness::DEFAULT_MIN_SPEED;
    for i in 0..=n {
        let t = t0 + i as f64 * cfg.dt;
        if t > duration {
            if end_moving {
                if let (Ok(mut s), Ok(u)) = (
                    flatness::flat_to_state(&end_flat, params),
                    flatness::flat_to_input(&end_flat, params),
                ) {
                    let p = end_flat.z + end_flat.dz * (t - duration);
                    s.x = p.x;
                    s.y = p.y;
                    s.r = 0.0;
                    heading = s.psi;
                    states.push(s);
                    if i < n {
                        inputs.push(u);
                    }
                    continue;
                }
            }
            let end = traj.position(duration);
            states.push(VesselState::new(end.x, end.y, heading, 0.0, 0.0, 0.0));
            if i < n {
                inputs.push(ControlInput::default());
            }
            continue;
        }
        match mode {
            ReferenceMode::FlatFeedforward => {
                let f = traj.sample(t);
                let near_boundary = t >= duration - end_eps || t <= end_eps;
                match flatness::flat_to_state(&f, params) {
                    Ok(s) => {
                        heading = s.psi;
                        states.push(s);
                        if i < n {
                            // Zero-order-held input best represents the
                            // flat feedforward at the step midpoint.
                            let f_mid = traj.sample(t + 0.5 * cfg.dt);
                            let ff = flatness::flat_to_input(&f_mid, params)
                                .or_else(|_| flatness::flat_to_input(&f, params))?;
                            inputs.push(ff);
                        }
                    }
                    Err(e) if near_boundary => {
                        // Rest regulation at the boundary point; missions
                        // that start or end at rest are handled here, not
                        // by the flat map.
                        let p = traj.position(t);
                        states.push(VesselState::new(p.x, p.y, heading, 0.0, 0.0, 0.0));
                        if i < n {
                            inputs.push(ControlInput::default());
                        }
                        let _ = e;
                    }
                    Err(e) => {
                        return Err(match e {
                            FlatnessError::DegenerateVelocity { speed, floor, .. } => {
                                FlatnessError::DegenerateVelocity {
                                    speed,
                                    floor,
                                    t: Some(t),
                                }
                            }
                        })
                    }
                }
            }
            ReferenceMode::PositionOnly => {
                let p = traj.position(t);
                let ahead = traj.position(t + cfg.dt);
                let d = ahead - p;
                if d.norm() > 1e-6 {
                    heading = d.y.atan2(d.x);
                }
                states.push(VesselState::new(p.x, p.y, heading, 0.0, 0.0, 0.0));
                if i < n {
                    inputs.push(ControlInput::default());
                }
            }
        }
    }
    Ok(ReferenceWindow { states, inputs })
}

/// Outcome of one control tick.
#[derive(Debug, Clone)]
pub struct ControlTick {
    pub input: ControlInput,
    pub reference: VesselState,
    pub solve_ms: f64,
    pub flagged: bool,
}

/// One NMPC tick against a trajectory at local time `t_traj`: builds the
/// reference window, solves warm-started, handles degenerate references
/// (hold last input, flag) and the optional solve deadline.
#[allow(clippy::too_many_arguments)]
pub fn control_tick(
    traj: &PiecewiseTrajectory,
    t_traj: f64,
    state: &VesselState,
    cfg: &NmpcConfig,
    params: &VesselParams,
    mode: ReferenceMode,
    warm: &mut Option<NmpcSolution>,
    last_input: ControlInput,
    last_heading: &mut f64,
    period: f64,
) -> ControlTick {
    let t_solve = Instant::now();
    let window = reference_window(traj, t_traj, cfg, params, mode, *last_heading);
    let (input, reference, flagged) = match window {
        Ok(rw) => {
            *last_heading = rw.states[0].psi;
            let sol = solve(state, &rw, cfg, params, warm.as_ref());
            let u = sol.inputs[0];
            let reference = rw.states[0];
            *warm = Some(sol);
            (u, reference, false)
        }
        Err(_) => {
            // Degenerate reference away from the endpoints: hold the
            // previous input and flag the tick.
            let p = traj.position(t_traj);
            (
                last_input,
                VesselState::new(p.x, p.y, *last_heading, 0.0, 0.0, 0.0),
                true,
            )
        }
    };
    let solve_ms = t_solve.elapsed().as_secs_f64() * 1e3;
    let (applied, deadline_flag) = if cfg.enforce_deadline && solve_ms > period * 1e3 {
        (last_input, true)
    } else {
        (input, false)
    };
    ControlTick {
        input: applied,
        reference,
        solve_ms,
        flagged: flagged || deadline_flag,
    }
}

/// Runs the closed tracking loop at `rate` Hz over the trajectory domain.
pub fn track(
    traj: &PiecewiseTrajectory,
    plant: &mut dyn Plant,
    cfg: &NmpcConfig,
    params: &VesselParams,
    rate: f64,
    mode: ReferenceMode,
) -> TrackLog {
    assert!(rate > 0.0);
    let period = 1.0 / rate;
    let ticks = (traj.duration() * rate).floor() as usize;
    let mut log = TrackLog::default();
    if ticks == 0 {
        return log;
    }
    let mut warm: Option<NmpcSolution> = None;
    let mut last_input = ControlInput::default();
    let mut last_heading = {
        let d = traj.velocity(0.0);
        if d.norm() > 1e-6 {
            d.y.atan2(d.x)
        } else {
            plant.state().psi
        }
    };
    for k in 0..ticks {
        let t = k as f64 * period;
        let state = plant.state();
        let tick = control_tick(
            traj,
            t,
            &state,
            cfg,
            params,
            mode,
            &mut warm,
            last_input,
            &mut last_heading,
            period,
        );
        plant.apply(tick.input, period);
        last_input = tick.input;
        log.samples.push(TrackSample {
            t,
            state,
            reference: tick.reference,
            input: tick.input,
            solve_ms: tick.solve_ms,
            flagged: tick.flagged,
        });
    }
    log
}
