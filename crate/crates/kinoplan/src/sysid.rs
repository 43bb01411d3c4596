//! # System identification
//!
//! Estimates the hydrodynamic parameters `h = [m1, m2, d1, d2, d3]` from a
//! logged motion trace by bounded weighted least squares. The residual of
//! each consecutive sample pair is the one-step RK4 prediction error
//!
//! ```text
//! eps_i(h) = x_{i+1} - f_RK4(x_i, u_i, dt, h),
//! ```
//!
//! the cost is `sum eps' Omega eps`, and the solver is Gauss-Newton with
//! analytic parameter Jacobians, steps projected onto the box
//! `[h_l, h_u]`, and a halving line search. Rank-deficient normal
//! equations (insufficient excitation) are reported distinctly from
//! non-convergence.

use crate::vessel::{
    dynamics_jacobians, dynamics_param_jacobian, rk4_step, wrap_angle_diff, ControlInput,
    VesselParams, VesselState,
};
use nalgebra::{Matrix6, SMatrix, SVector, Vector6};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub type HydroVector = SVector<f64, 5>;

#[derive(Debug, Error)]
pub enum SysIdError {
    #[error("motion log needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("motion log spacing is not uniform at sample {index}: dt {got} vs {expected}")]
    NonUniform {
        index: usize,
        got: f64,
        expected: f64,
    },
    #[error("normal equations are rank deficient (insufficient excitation)")]
    InsufficientExcitation,
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    MaxIterations {
        iterations: usize,
        gradient_norm: f64,
        best: Box<IdentResult>,
    },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("log file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log parse error: {0}")]
    Parse(String),
}

/// One logged sample of the vessel state and the applied input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSample {
    pub t: f64,
    pub state: VesselState,
    pub input: ControlInput,
}

/// Time-ordered motion log with uniform spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionLog {
    samples: Vec<LogSample>,
    dt: f64,
}

impl MotionLog {
    pub fn new(samples: Vec<LogSample>) -> Result<Self, SysIdError> {
        if samples.len() < 2 {
            return Err(SysIdError::TooShort(samples.len()));
        }
        let dt = samples[1].t - samples[0].t;
        if !(dt > 0.0) {
            return Err(SysIdError::NonUniform {
                index: 1,
                got: dt,
                expected: f64::NAN,
            });
        }
        for (i, pair) in samples.windows(2).enumerate() {
            let step = pair[1].t - pair[0].t;
            if (step - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(SysIdError::NonUniform {
                    index: i + 1,
                    got: step,
                    expected: dt,
                });
            }
        }
        Ok(Self { samples, dt })
    }

    pub fn samples(&self) -> &[LogSample] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Reads a `t,x,y,psi,u,v,r,tau_u,tau_r` CSV log.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, SysIdError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| SysIdError::Parse(e.to_string()))?
            .clone();
        let expected = ["t", "x", "y", "psi", "u", "v", "r", "tau_u", "tau_r"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(SysIdError::Parse(format!(
                "unexpected header {:?}, want {:?}",
                headers, expected
            )));
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SysIdError::Parse(e.to_string()))?;
            let f = |i: usize| -> Result<f64, SysIdError> {
                rec.get(i)
                    .ok_or_else(|| SysIdError::Parse("short row".into()))?
                    .trim()
                    .parse()
                    .map_err(|e| SysIdError::Parse(format!("bad number: {e}")))
            };
            samples.push(LogSample {
                t: f(0)?,
                state: VesselState::new(f(1)?, f(2)?, f(3)?, f(4)?, f(5)?, f(6)?),
                input: ControlInput::new(f(7)?, f(8)?),
            });
        }
        Self::new(samples)
    }

    pub fn from_csv_file<P: AsRef<Path>>(path: P) -> Result<Self, SysIdError> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    /// Zero-phase centered moving average over the states (window length
    /// rounded up to odd, edges clamped). One-step residuals at high log
    /// rates amplify measurement noise on the predictor states; a short
    /// pre-filter removes that bias at negligible signal distortion.
    pub fn smoothed(&self, window: usize) -> MotionLog {
        let samples = &self.samples;
        let n = samples.len();
        let half = window / 2;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let mut acc = Vector6::<f64>::zeros();
            for s in &samples[lo..=hi] {
                acc += s.state.as_vector();
            }
            acc /= (hi - lo + 1) as f64;
            out.push(LogSample {
                t: samples[i].t,
                state: VesselState::from_vector(&acc),
                input: samples[i].input,
            });
        }
        MotionLog::new(out).expect("spacing unchanged by smoothing")
    }

    /// Writes the log in the same CSV schema.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SysIdError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "psi", "u", "v", "r", "tau_u", "tau_r"])
            .map_err(|e| SysIdError::Parse(e.to_string()))?;
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
                    s.input.tau_u,
                    s.input.tau_r,
                ]
                .map(|v| format!("{v:.12}")),
            )
            .map_err(|e| SysIdError::Parse(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bounded weighted least-squares problem description.
#[derive(Debug, Clone)]
pub struct IdentProblem {
    pub log: MotionLog,
    pub h_lower: HydroVector,
    pub h_upper: HydroVector,
    /// Residual weight, symmetric positive definite.
    pub omega: Matrix6<f64>,
    pub h_init: HydroVector,
    /// Template for the non-hydrodynamic parameters.
    pub base_params: VesselParams,
}

impl IdentProblem {
    pub fn new(log: MotionLog, h_init: HydroVector) -> Self {
        Self {
            log,
            h_lower: HydroVector::from_element(1e-3),
            h_upper: HydroVector::from_element(1e4),
            omega: Matrix6::identity(),
            h_init,
            base_params: VesselParams::default(),
        }
    }

    fn validate(&self) -> Result<(), SysIdError> {
        for i in 0..5 {
            if !(self.h_lower[i] <= self.h_init[i] && self.h_init[i] <= self.h_upper[i]) {
                return Err(SysIdError::InvalidProblem(format!(
                    "h_init[{i}] outside bounds"
                )));
            }
        }
        if (self.omega - self.omega.transpose()).norm() > 1e-9 {
            return Err(SysIdError::InvalidProblem("omega not symmetric".into()));
        }
        if self.omega.cholesky().is_none() {
            return Err(SysIdError::InvalidProblem(
                "omega not positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// Estimation output.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentResult {
    pub h_hat: HydroVector,
    pub final_cost: f64,
    pub iterations: usize,
}

fn residual_state_diff(next: &VesselState, pred: &VesselState) -> Vector6<f64> {
    let mut r = next.as_vector() - pred.as_vector();
    r[2] = wrap_angle_diff(next.psi, pred.psi);
    r
}

/// One-step prediction residuals for every consecutive sample pair.
pub fn residuals(
    h: &HydroVector,
    log: &MotionLog,
    base: &VesselParams,
) -> Result<Vec<Vector6<f64>>, SysIdError> {
    let p = base.with_hydro(h);
    let dt = log.dt();
    Ok(log
        .samples()
        .windows(2)
        .map(|w| {
            let pred = rk4_step(&w[0].state, &w[0].input, dt, &p).expect("dt > 0 by construction");
            residual_state_diff(&w[1].state, &pred)
        })
        .collect())
}

/// Analytic Jacobian of one RK4 step with respect to the hydrodynamic
/// parameters, chain-ruled through the four stages.
pub fn rk4_param_jacobian(
    s: &VesselState,
    c: &ControlInput,
    dt: f64,
    p: &VesselParams,
) -> SMatrix<f64, 6, 5> {
    let x0 = s.as_vector();
    let f = |xs: &Vector6<f64>| {
        crate::vessel::dynamics_deriv(&VesselState::from_vector(xs), c, p)
    };
    let k1 = f(&x0);
    let x_a = x0 + 0.5 * dt * k1;
    let k2 = f(&x_a);
    let x_b = x0 + 0.5 * dt * k2;
    let k3 = f(&x_b);
    let x_c = x0 + dt * k3;

    let jx = |xs: &Vector6<f64>| dynamics_jacobians(&VesselState::from_vector(xs), c, p).0;
    let jh = |xs: &Vector6<f64>| dynamics_param_jacobian(&VesselState::from_vector(xs), c, p);

    let dk1 = jh(&x0);
    let dk2 = jh(&x_a) + jx(&x_a) * (0.5 * dt * dk1);
    let dk3 = jh(&x_b) + jx(&x_b) * (0.5 * dt * dk2);
    let dk4 = jh(&x_c) + jx(&x_c) * (dt * dk3);
    (dt / 6.0) * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4)
}

fn cost_of(h: &HydroVector, prob: &IdentProblem) -> f64 {
    let r = residuals(h, &prob.log, &prob.base_params).expect("validated log");
    // Fixed summation order keeps the result independent of parallelism.
    r.iter().fold(0.0, |acc, e| acc + (e.transpose() * prob.omega * e)[0])
}

fn project(h: &HydroVector, prob: &IdentProblem) -> HydroVector {
    let mut out = *h;
    for i in 0..5 {
        out[i] = out[i].clamp(prob.h_lower[i], prob.h_upper[i]);
    }
    out
}

const MAX_ITERATIONS: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-10;
const MAX_BACKTRACKS: usize = 20;

/// Gauss-Newton estimation with projected steps and backtracking.
pub fn estimate(prob: &IdentProblem) -> Result<IdentResult, SysIdError> {
    prob.validate()?;
    let dt = prob.log.dt();
    let mut h = project(&prob.h_init, prob);
    let mut cost = cost_of(&h, prob);
    let mut iterations = 0;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let params = prob.base_params.with_hydro(&h);
        let mut normal = SMatrix::<f64, 5, 5>::zeros();
        let mut rhs = SVector::<f64, 5>::zeros();
        for w in prob.log.samples().windows(2) {
            let pred =
                rk4_step(&w[0].state, &w[0].input, dt, &params).expect("dt > 0 by construction");
            let eps = residual_state_diff(&w[1].state, &pred);
            // d eps / d h = -d f_RK4 / d h
            let jac = -rk4_param_jacobian(&w[0].state, &w[0].input, dt, &params);
            let wj = prob.omega * jac;
            normal += jac.transpose() * wj;
            rhs += jac.transpose() * (prob.omega * eps);
        }
        // Projected gradient accounts for active bounds.
        let grad = 2.0 * rhs;
        let mut proj_grad = grad;
        for i in 0..5 {
            let at_lower = (h[i] - prob.h_lower[i]).abs() < 1e-12 && grad[i] > 0.0;
            let at_upper = (h[i] - prob.h_upper[i]).abs() < 1e-12 && grad[i] < 0.0;
            if at_lower || at_upper {
                proj_grad[i] = 0.0;
            }
        }
        if proj_grad.norm() < GRAD_TOL {
            return Ok(IdentResult {
                h_hat: h,
                final_cost: cost,
                iterations,
            });
        }

        let chol = normal
            .cholesky()
            .ok_or(SysIdError::InsufficientExcitation)?;
        let full_step = -chol.solve(&rhs);

        // Backtracking on the projected step.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACKS {
            let cand = project(&(h + scale * full_step), prob);
            let cand_cost = cost_of(&cand, prob);
            if cand_cost <= cost {
                let step_norm = (cand - h).norm();
                h = cand;
                cost = cand_cost;
                accepted = true;
                if step_norm < STEP_TOL {
                    return Ok(IdentResult {
                        h_hat: h,
                        final_cost: cost,
                        iterations,
                    });
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // Line search stalled: the projected step cannot decrease the
            // cost; treat as converged at the current point.
            return Ok(IdentResult {
                h_hat: h,
                final_cost: cost,
                iterations,
            });
        }
    }
    Err(SysIdError::MaxIterations {
        iterations,
        gradient_norm: f64::NAN,
        best: Box::new(IdentResult {
            h_hat: h,
            final_cost: cost,
            iterations,
        }),
    })
}

/// Simulates a log with sinusoidal excitation, for tests and demo assets.
pub fn synthetic_log(
    params: &VesselParams,
    duration: f64,
    dt: f64,
    initial: VesselState,
) -> MotionLog {
    let mut samples = Vec::new();
    let mut state = initial;
    let steps = (duration / dt).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let input = ControlInput::new(
            40.0 + 30.0 * (0.5 * t).sin() + 10.0 * (1.7 * t).cos(),
            18.0 * (0.8 * t).sin() + 6.0 * (2.3 * t).cos(),
        );
        samples.push(LogSample { t, state, input });
        state = rk4_step(&state, &input, dt, params).expect("dt > 0");
    }
    MotionLog::new(samples).expect("uniform by construction")
}
