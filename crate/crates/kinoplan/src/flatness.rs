//! # Differential flatness maps
//!
//! The planar vessel with unactuated sway is differentially flat with flat
//! output `z = [x, y]`. Writing the sway equation
//! `m1 v_dot = -m1 u r - d2 v` in earth-frame coordinates collapses it to
//!
//! ```text
//! -sin(psi) (m1 x_dd + d2 x_d) + cos(psi) (m1 y_dd + d2 y_d) = 0,
//! ```
//!
//! so the heading is the direction of the auxiliary vector
//! `w = m1 z_dd + d2 z_d`:
//!
//! ```text
//! psi = atan2(w_y, w_x)        (forward branch: w . z_d >= 0)
//! r   = (w x w_d) / |w|^2      with w_d = m1 z^(3) + d2 z_dd
//! ```
//!
//! and body velocities follow by rotating `z_d` into the body frame. The
//! inputs come from substituting these maps into the surge and yaw
//! equations; the yaw torque needs `r_dot` and therefore `z^(4)`. The full
//! derivation is in `docs/flatness.md`; the open-loop replay tests below
//! are its correctness oracle.

use crate::trajopt::PiecewiseTrajectory;
use crate::vessel::{wrap_angle, ControlInput, VesselParams, VesselState};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed floor below which the heading is undefined and recovery fails.
pub const DEFAULT_MIN_SPEED: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum FlatnessError {
    #[error("degenerate velocity |dz| = {speed:.3e} below floor {floor:.3e}{}",
            .t.map(|t| format!(" at t = {t:.3}")).unwrap_or_default())]
    DegenerateVelocity {
        speed: f64,
        floor: f64,
        t: Option<f64>,
    },
}

/// Flat output `z = [x, y]` and its time derivatives through order 4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatState {
    pub z: Vector2<f64>,
    pub dz: Vector2<f64>,
    pub d2z: Vector2<f64>,
    pub d3z: Vector2<f64>,
    pub d4z: Vector2<f64>,
}

impl FlatState {
    /// Constant-velocity flat state (higher derivatives zero).
    pub fn cruising(z: Vector2<f64>, dz: Vector2<f64>) -> Self {
        Self {
            z,
            dz,
            d2z: Vector2::zeros(),
            d3z: Vector2::zeros(),
            d4z: Vector2::zeros(),
        }
    }

    /// Rotates the whole flat state about the origin by `theta`.
    pub fn rotated(&self, theta: f64) -> Self {
        let rot = nalgebra::Rotation2::new(theta);
        Self {
            z: rot * self.z,
            dz: rot * self.dz,
            d2z: rot * self.d2z,
            d3z: rot * self.d3z,
            d4z: rot * self.d4z,
        }
    }
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

struct Recovered {
    psi: f64,
    u: f64,
    v: f64,
    r: f64,
    r_dot: f64,
    u_dot: f64,
}

fn recover(f: &FlatState, p: &VesselParams, floor: f64) -> Result<Recovered, FlatnessError> {
    let speed = f.dz.norm();
    if speed < floor {
        return Err(FlatnessError::DegenerateVelocity {
            speed,
            floor,
            t: None,
        });
    }
    let w = p.m1 * f.d2z + p.d2 * f.dz;
    let w_dot = p.m1 * f.d3z + p.d2 * f.d2z;
    let w_ddot = p.m1 * f.d4z + p.d2 * f.d3z;
    let wn2 = w.norm_squared();
    if wn2.sqrt() < floor * p.d2 {
        // Heading direction collapses when braking exactly along -dz.
        return Err(FlatnessError::DegenerateVelocity {
            speed: wn2.sqrt(),
            floor: floor * p.d2,
            t: None,
        });
    }
    // Forward branch keeps surge velocity non-negative.
    let psi = if w.dot(&f.dz) >= 0.0 {
        w.y.atan2(w.x)
    } else {
        wrap_angle(w.y.atan2(w.x) + std::f64::consts::PI)
    };
    let (s, c) = psi.sin_cos();
    let u = c * f.dz.x + s * f.dz.y;
    let v = -s * f.dz.x + c * f.dz.y;
    // Angle rate and acceleration of w; both are branch-independent.
    let r = cross2(&w, &w_dot) / wn2;
    let r_dot = cross2(&w, &w_ddot) / wn2 - 2.0 * w.dot(&w_dot) * cross2(&w, &w_dot) / (wn2 * wn2);
    let u_dot = r * v + c * f.d2z.x + s * f.d2z.y;
    Ok(Recovered {
        psi,
        u,
        v,
        r,
        r_dot,
        u_dot,
    })
}

/// Recovers the full vessel state from a flat state, with an explicit
/// minimum-speed floor.
pub fn flat_to_state_with_floor(
    f: &FlatState,
    p: &VesselParams,
    floor: f64,
) -> Result<VesselState, FlatnessError> {
    let rec = recover(f, p, floor)?;
    Ok(VesselState::new(
        f.z.x, f.z.y, rec.psi, rec.u, rec.v, rec.r,
    ))
}

/// Recovers the full vessel state from a flat state.
pub fn flat_to_state(f: &FlatState, p: &VesselParams) -> Result<VesselState, FlatnessError> {
    flat_to_state_with_floor(f, p, DEFAULT_MIN_SPEED)
}

/// Recovers the feedforward input from a flat state, with an explicit
/// minimum-speed floor.
pub fn flat_to_input_with_floor(
    f: &FlatState,
    p: &VesselParams,
    floor: f64,
) -> Result<ControlInput, FlatnessError> {
    let rec = recover(f, p, floor)?;
    let tau_u = p.m1 * rec.u_dot - p.m2 * rec.v * rec.r + p.d1 * rec.u;
    let tau_r = p.m2 * rec.r_dot + (p.m2 - p.m1) * rec.u * rec.v + p.d3 * rec.r;
    Ok(ControlInput::new(tau_u, tau_r))
}

/// Recovers the feedforward input from a flat state.
pub fn flat_to_input(f: &FlatState, p: &VesselParams) -> Result<ControlInput, FlatnessError> {
    flat_to_input_with_floor(f, p, DEFAULT_MIN_SPEED)
}

/// Samples a trajectory at the given times and recovers the full state and
/// feedforward input per sample. On failure the offending time is attached
/// to the error.
pub fn trajectory_to_references(
    traj: &PiecewiseTrajectory,
    times: &[f64],
    p: &VesselParams,
) -> Result<Vec<(VesselState, ControlInput)>, FlatnessError> {
    times
        .iter()
        .map(|&t| {
            let f = traj.sample(t);
            let tag = |e: FlatnessError| match e {
                FlatnessError::DegenerateVelocity { speed, floor, .. } => {
                    FlatnessError::DegenerateVelocity {
                        speed,
                        floor,
                        t: Some(t),
                    }
                }
            };
            let state = flat_to_state(&f, p).map_err(tag)?;
            let input = flat_to_input(&f, p).map_err(tag)?;
            Ok((state, input))
        })
        .collect()
}
