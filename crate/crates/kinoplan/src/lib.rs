//! # kinoplan
//!
//! Kinodynamic trajectory planning and tracking for under-actuated planar
//! vessels (USVs): a 3-DOF catamaran dynamics model with system
//! identification, differential-flatness maps between flat outputs and
//! vessel states/inputs, a Dubins/A*-guided bidirectional dynamic RRT*
//! with closed-form minimum-jerk steering, quadratic piecewise-polynomial
//! trajectory optimization, and an NMPC tracker, plus a scenario-driven
//! simulation harness.
//!
//! The crate is organized along the pipeline:
//!
//! * [`vessel`] — continuous dynamics, thrust allocation, RK4 propagation
//! * [`sysid`] — hydrodynamic parameter estimation from motion logs
//! * [`flatness`] — state/input recovery from the flat output `[x, y]`
//! * [`worldmap`] — occupancy grid, inflation, collision queries, grid A*
//! * [`guidance`] — Dubins primitives and topological guidance paths
//! * [`obvp`] — closed-form minimum-jerk boundary value problems
//! * [`trajopt`] — quadratic trajectory optimization and local repair
//! * [`planner`] — bidirectional dynamic RRT* over flat space
//! * [`tracker`] — SQP-based NMPC trajectory tracking
//! * [`harness`] — closed-loop simulation, benchmarks, metrics

pub mod flatness;
pub mod guidance;
pub mod harness;
pub mod obvp;
pub mod planner;
mod poly;
pub mod sysid;
pub mod tracker;
pub mod trajopt;
pub mod vessel;
pub mod worldmap;

pub use flatness::FlatState;
pub use obvp::{BoundaryState, QuinticSegment};
pub use planner::{PlanConfig, PlanMetrics, PlanResult};
pub use trajopt::PiecewiseTrajectory;
pub use vessel::{ControlInput, ThrusterPair, VesselParams, VesselState};
pub use worldmap::OccupancyGrid;
