//! # Topological guidance
//!
//! Builds the guidance path that seeds the sampling corridor: grid A*
//! between the endpoints, decimation to corner waypoints, Dubins
//! connections between consecutive waypoints (shortest of the six words
//! LSL/RSR/LSR/RSL/RLR/LRL under the minimum turning radius), and
//! iterative push-out of colliding curve points along the clearance
//! gradient. Legs that cannot be freed fall back to the raw grid
//! polyline at that junction.

use crate::vessel::wrap_angle;
use crate::worldmap::{OccupancyGrid, WorldError};
use nalgebra::Vector2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("no guidance path: {0}")]
    NoPath(#[from] WorldError),
    #[error("collision point could not be pushed out in {0} iterations")]
    PushoutFailed(usize),
}

/// A posed planar configuration with its minimum turning radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsConfig {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub rho_min: f64,
}

impl DubinsConfig {
    pub fn new(x: f64, y: f64, theta: f64, rho_min: f64) -> Self {
        assert!(rho_min > 0.0, "turning radius must be positive");
        Self {
            x,
            y,
            theta,
            rho_min,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// The six candidate Dubins words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DubinsWord {
    Lsl,
    Rsr,
    Lsr,
    Rsl,
    Rlr,
    Lrl,
}

impl DubinsWord {
    pub const ALL: [DubinsWord; 6] = [
        DubinsWord::Lsl,
        DubinsWord::Rsr,
        DubinsWord::Lsr,
        DubinsWord::Rsl,
        DubinsWord::Rlr,
        DubinsWord::Lrl,
    ];

    fn segments(&self) -> [SegKind; 3] {
        use DubinsWord::*;
        use SegKind::*;
        match self {
            Lsl => [Left, Straight, Left],
            Rsr => [Right, Straight, Right],
            Lsr => [Left, Straight, Right],
            Rsl => [Right, Straight, Left],
            Rlr => [Right, Left, Right],
            Lrl => [Left, Right, Left],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegKind {
    Left,
    Right,
    Straight,
}

/// A solved Dubins connection; segment parameters are in units of the
/// turning radius.
#[derive(Debug, Clone, PartialEq)]
pub struct DubinsPath {
    pub word: DubinsWord,
    /// Normalized lengths of the three segments (radius units).
    pub params: [f64; 3],
    pub rho: f64,
    q0: (f64, f64, f64),
}

impl DubinsPath {
    pub fn length(&self) -> f64 {
        (self.params[0] + self.params[1] + self.params[2]) * self.rho
    }

    /// Pose at arclength `s` from the start, clamped to the path.
    pub fn sample(&self, s: f64) -> (f64, f64, f64) {
        let s = s.clamp(0.0, self.length()) / self.rho;
        let mut pose = self.q0;
        let mut remaining = s;
        for (kind, &len) in self.word.segments().iter().zip(self.params.iter()) {
            let step = remaining.min(len);
            pose = advance(pose, *kind, step, self.rho);
            remaining -= step;
            if remaining <= 1e-12 {
                break;
            }
        }
        pose
    }

    /// End pose of the path.
    pub fn end(&self) -> (f64, f64, f64) {
        self.sample(self.length())
    }
}

fn advance(pose: (f64, f64, f64), kind: SegKind, s: f64, rho: f64) -> (f64, f64, f64) {
    let (x, y, th) = pose;
    match kind {
        SegKind::Left => (
            x + rho * ((th + s).sin() - th.sin()),
            y + rho * (th.cos() - (th + s).cos()),
            wrap_angle(th + s),
        ),
        SegKind::Right => (
            x + rho * (th.sin() - (th - s).sin()),
            y + rho * ((th - s).cos() - th.cos()),
            wrap_angle(th - s),
        ),
        SegKind::Straight => (x + rho * s * th.cos(), y + rho * s * th.sin(), th),
    }
}

fn mod2pi(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut v = a % two_pi;
    if v < 0.0 {
        v += two_pi;
    }
    v
}

/// Normalized word solutions `(t, p, q)` in radius units, or `None` when
/// the word does not exist for this configuration pair.
fn solve_word(word: DubinsWord, alpha: f64, beta: f64, d: f64) -> Option<[f64; 3]> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let c_ab = (alpha - beta).cos();
    match word {
        DubinsWord::Lsl => {
            let p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sa - sb);
            if p_sq < 0.0 {
                return None;
            }
            let tmp = (cb - ca).atan2(d + sa - sb);
            Some([mod2pi(tmp - alpha), p_sq.sqrt(), mod2pi(beta - tmp)])
        }
        DubinsWord::Rsr => {
            let p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sb - sa);
            if p_sq < 0.0 {
                return None;
            }
            let tmp = (ca - cb).atan2(d - sa + sb);
            Some([mod2pi(alpha - tmp), p_sq.sqrt(), mod2pi(tmp - beta)])
        }
        DubinsWord::Lsr => {
            let p_sq = -2.0 + d * d + 2.0 * c_ab + 2.0 * d * (sa + sb);
            if p_sq < 0.0 {
                return None;
            }
            let p = p_sq.sqrt();
            let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
            Some([mod2pi(tmp - alpha), p, mod2pi(tmp - mod2pi(beta))])
        }
        DubinsWord::Rsl => {
            let p_sq = d * d - 2.0 + 2.0 * c_ab - 2.0 * d * (sa + sb);
            if p_sq < 0.0 {
                return None;
            }
            let p = p_sq.sqrt();
            let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
            Some([mod2pi(alpha - tmp), p, mod2pi(beta - tmp)])
        }
        DubinsWord::Rlr => {
            let tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0;
            if tmp.abs() > 1.0 {
                return None;
            }
            let p = mod2pi(2.0 * std::f64::consts::PI - tmp.acos());
            let phi = (ca - cb).atan2(d - sa + sb);
            let t = mod2pi(alpha - phi + mod2pi(p / 2.0));
            Some([t, p, mod2pi(alpha - beta - t + mod2pi(p))])
        }
        DubinsWord::Lrl => {
            let tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0;
            if tmp.abs() > 1.0 {
                return None;
            }
            let p = mod2pi(2.0 * std::f64::consts::PI - tmp.acos());
            let phi = (-ca + cb).atan2(d + sa - sb);
            let t = mod2pi(-alpha + phi + mod2pi(p / 2.0));
            Some([t, p, mod2pi(mod2pi(beta) - alpha - t + mod2pi(p))])
        }
    }
}

/// Solves one specific word between two configurations.
pub fn dubins_word(q0: &DubinsConfig, q1: &DubinsConfig, word: DubinsWord) -> Option<DubinsPath> {
    let rho = q0.rho_min;
    let dx = q1.x - q0.x;
    let dy = q1.y - q0.y;
    let big_d = (dx * dx + dy * dy).sqrt();
    let d = big_d / rho;
    let theta = if big_d > 1e-12 { dy.atan2(dx) } else { 0.0 };
    let alpha = mod2pi(q0.theta - theta);
    let beta = mod2pi(q1.theta - theta);
    solve_word(word, alpha, beta, d).map(|params| DubinsPath {
        word,
        params,
        rho,
        q0: (q0.x, q0.y, q0.theta),
    })
}

/// Shortest Dubins path among the six words (always exists).
pub fn dubins_shortest(q0: &DubinsConfig, q1: &DubinsConfig) -> DubinsPath {
    DubinsWord::ALL
        .iter()
        .filter_map(|&w| dubins_word(q0, q1, w))
        .min_by(|a, b| a.length().total_cmp(&b.length()))
        .expect("at least one Dubins word always exists")
}

/// Topological guidance path: key waypoints with headings plus a dense
/// polyline (position, tangent) for corridor sampling.
#[derive(Debug, Clone)]
pub struct TopoPath {
    /// Key waypoints `(position, heading)`, endpoints equal to the query.
    pub waypoints: Vec<(Vector2<f64>, f64)>,
    pub total_length: f64,
    /// Dense samples `(position, tangent angle)` along the full path.
    pub polyline: Vec<(Vector2<f64>, f64)>,
    /// Number of junctions that fell back to the raw grid path.
    pub fallback_junctions: usize,
}

const POLYLINE_STEP: f64 = 0.5;
const COLLISION_SAMPLE_STEP: f64 = 0.05;
const PUSHOUT_ITERS: usize = 10;
const LEG_REFINE_ITERS: usize = 10;

/// Finds the guidance path between two posed configurations.
pub fn topo_path_find(
    grid: &OccupancyGrid,
    start: &DubinsConfig,
    goal: &DubinsConfig,
    push_step: f64,
) -> Result<TopoPath, GuidanceError> {
    let grid_path = grid.astar(start.position(), goal.position())?;
    let cells: Vec<Vector2<f64>> = grid_path
        .cells
        .iter()
        .map(|&(ix, iy)| grid.cell_center(ix, iy))
        .collect();
    let corners = decimate_to_corners(&cells);

    // Headings: query headings at the ends, direction bisector in between.
    let mut waypoints: Vec<(Vector2<f64>, f64)> = Vec::with_capacity(corners.len());
    waypoints.push((start.position(), start.theta));
    for i in 1..corners.len().saturating_sub(1) {
        let dir_in = (corners[i] - corners[i - 1]).normalize();
        let dir_out = (corners[i + 1] - corners[i]).normalize();
        let sum = dir_in + dir_out;
        let heading = if sum.norm() > 1e-9 {
            sum.y.atan2(sum.x)
        } else {
            dir_in.y.atan2(dir_in.x)
        };
        waypoints.push((corners[i], heading));
    }
    waypoints.push((goal.position(), goal.theta));

    // Connect consecutive waypoints by Dubins legs, pushing collision
    // points out of obstacles; failed legs fall back to the grid polyline.
    let mut polyline: Vec<(Vector2<f64>, f64)> = Vec::new();
    let mut final_waypoints: Vec<(Vector2<f64>, f64)> = vec![waypoints[0]];
    let mut fallback_junctions = 0;
    for leg in waypoints.windows(2) {
        let (wa, wb) = (leg[0], leg[1]);
        match connect_leg(grid, wa, wb, start.rho_min, push_step) {
            Ok((leg_waypoints, leg_polyline)) => {
                final_waypoints.extend(leg_waypoints.into_iter().skip(1));
                extend_polyline(&mut polyline, leg_polyline);
            }
            Err(GuidanceError::PushoutFailed(_)) => {
                fallback_junctions += 1;
                let seg = grid_polyline_between(&cells, wa.0, wb.0);
                final_waypoints.push(wb);
                extend_polyline(&mut polyline, seg);
            }
            Err(e) => return Err(e),
        }
    }
    let total_length: f64 = polyline
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).norm())
        .sum();
    Ok(TopoPath {
        waypoints: final_waypoints,
        total_length,
        polyline,
        fallback_junctions,
    })
}

fn extend_polyline(poly: &mut Vec<(Vector2<f64>, f64)>, mut add: Vec<(Vector2<f64>, f64)>) {
    if let (Some(last), Some(first)) = (poly.last(), add.first()) {
        if (last.0 - first.0).norm() < 1e-9 {
            add.remove(0);
        }
    }
    poly.extend(add);
}

/// One Dubins leg with iterative collision push-out. Returns the final
/// waypoint chain of the leg and its sampled polyline.
#[allow(clippy::type_complexity)]
fn connect_leg(
    grid: &OccupancyGrid,
    a: (Vector2<f64>, f64),
    b: (Vector2<f64>, f64),
    rho: f64,
    push_step: f64,
) -> Result<(Vec<(Vector2<f64>, f64)>, Vec<(Vector2<f64>, f64)>), GuidanceError> {
    let mut chain = vec![a, b];
    for _ in 0..LEG_REFINE_ITERS {
        let (collision, polyline) = sample_chain(grid, &chain, rho);
        match collision {
            None => return Ok((chain, polyline)),
            Some((idx, p_c)) => {
                let freed = push_out(grid, p_c, push_step)?;
                // Insert the freed point as a waypoint splitting leg `idx`;
                // heading from the local travel direction bisector.
                let dir_in = (freed - chain[idx].0).normalize();
                let dir_out = (chain[idx + 1].0 - freed).normalize();
                let sum = dir_in + dir_out;
                let heading = if sum.norm() > 1e-9 {
                    sum.y.atan2(sum.x)
                } else {
                    dir_in.y.atan2(dir_in.x)
                };
                chain.insert(idx + 1, (freed, heading));
            }
        }
    }
    Err(GuidanceError::PushoutFailed(LEG_REFINE_ITERS))
}

/// Samples a chain of Dubins legs; returns the first collision (leg index
/// and midpoint of the colliding run) or the full polyline when free.
#[allow(clippy::type_complexity)]
fn sample_chain(
    grid: &OccupancyGrid,
    chain: &[(Vector2<f64>, f64)],
    rho: f64,
) -> (Option<(usize, Vector2<f64>)>, Vec<(Vector2<f64>, f64)>) {
    let mut polyline = Vec::new();
    for (idx, pair) in chain.windows(2).enumerate() {
        let q0 = DubinsConfig::new(pair[0].0.x, pair[0].0.y, pair[0].1, rho);
        let q1 = DubinsConfig::new(pair[1].0.x, pair[1].0.y, pair[1].1, rho);
        let path = dubins_shortest(&q0, &q1);
        let len = path.length();
        let n = (len / COLLISION_SAMPLE_STEP).ceil().max(1.0) as usize;
        let mut run: Vec<Vector2<f64>> = Vec::new();
        for k in 0..=n {
            let (x, y, th) = path.sample(len * k as f64 / n as f64);
            let p = Vector2::new(x, y);
            if grid.occupied_world(p) {
                run.push(p);
            } else if !run.is_empty() {
                break;
            }
            if k % ((POLYLINE_STEP / COLLISION_SAMPLE_STEP) as usize).max(1) == 0 {
                polyline.push((p, th));
            }
        }
        if !run.is_empty() {
            let mid = run[run.len() / 2];
            return (Some((idx, mid)), polyline);
        }
        let endp = path.end();
        polyline.push((Vector2::new(endp.0, endp.1), endp.2));
    }
    (None, polyline)
}

/// Pushes a colliding point outward along the clearance gradient until it
/// reaches free space.
fn push_out(
    grid: &OccupancyGrid,
    mut p: Vector2<f64>,
    step: f64,
) -> Result<Vector2<f64>, GuidanceError> {
    for _ in 0..PUSHOUT_ITERS {
        if !grid.occupied_world(p) {
            return Ok(p);
        }
        let grad = grid.clearance_gradient(p);
        if grad.norm() < 1e-9 {
            return Err(GuidanceError::PushoutFailed(PUSHOUT_ITERS));
        }
        p += grad.normalize() * step;
    }
    if grid.occupied_world(p) {
        Err(GuidanceError::PushoutFailed(PUSHOUT_ITERS))
    } else {
        Ok(p)
    }
}

/// Keeps the first cell, the last cell, and every cell where the grid path
/// changes direction.
fn decimate_to_corners(cells: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    if cells.len() <= 2 {
        return cells.to_vec();
    }
    let mut out = vec![cells[0]];
    for i in 1..cells.len() - 1 {
        let d_in = cells[i] - cells[i - 1];
        let d_out = cells[i + 1] - cells[i];
        if (d_in.normalize() - d_out.normalize()).norm() > 1e-9 {
            out.push(cells[i]);
        }
    }
    out.push(*cells.last().unwrap());
    out
}

/// Raw grid polyline between the cells nearest to two waypoints (fallback
/// when Dubins legs cannot be freed).
fn grid_polyline_between(
    cells: &[Vector2<f64>],
    a: Vector2<f64>,
    b: Vector2<f64>,
) -> Vec<(Vector2<f64>, f64)> {
    let nearest = |p: Vector2<f64>| -> usize {
        cells
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| (*x - p).norm().total_cmp(&(*y - p).norm()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let (i0, i1) = (nearest(a), nearest(b));
    let (lo, hi) = (i0.min(i1), i0.max(i1));
    let slice = &cells[lo..=hi.min(cells.len() - 1)];
    let mut out = Vec::with_capacity(slice.len());
    for (k, &p) in slice.iter().enumerate() {
        let dir = if k + 1 < slice.len() {
            slice[k + 1] - p
        } else if k > 0 {
            p - slice[k - 1]
        } else {
            Vector2::new(1.0, 0.0)
        };
        out.push((p, dir.y.atan2(dir.x)));
    }
    if i1 < i0 {
        out.reverse();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmap::{Obstacle, SyntheticMap};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn collinear_pair_is_a_straight_lsl() {
        let q0 = DubinsConfig::new(0.0, 0.0, 0.0, 1.0);
        let q1 = DubinsConfig::new(10.0, 0.0, 0.0, 1.0);
        let path = dubins_shortest(&q0, &q1);
        assert_relative_eq!(path.length(), 10.0, epsilon = 1e-9);
        assert_eq!(path.word, DubinsWord::Lsl);
        assert_relative_eq!(path.params[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(path.params[2], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn every_word_reaches_its_endpoint() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..1000 {
            let q0 = DubinsConfig::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-3.14..3.14),
                1.0,
            );
            let q1 = DubinsConfig::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-3.14..3.14),
                1.0,
            );
            for w in DubinsWord::ALL {
                if let Some(path) = dubins_word(&q0, &q1, w) {
                    let (x, y, th) = path.end();
                    assert!(
                        (x - q1.x).abs() < 1e-6 && (y - q1.y).abs() < 1e-6,
                        "{w:?} endpoint ({x},{y}) != ({},{})",
                        q1.x,
                        q1.y
                    );
                    assert!(
                        wrap_angle(th - q1.theta).abs() < 1e-6,
                        "{w:?} heading {th} != {}",
                        q1.theta
                    );
                }
            }
        }
    }

    #[test]
    fn shortest_matches_exhaustive_evaluation() {
        let q0 = DubinsConfig::new(0.0, 0.0, 0.0, 1.0);
        let q1 = DubinsConfig::new(0.0, 4.0, std::f64::consts::PI, 1.0);
        let best = dubins_shortest(&q0, &q1);
        let exhaustive = DubinsWord::ALL
            .iter()
            .filter_map(|&w| dubins_word(&q0, &q1, w))
            .map(|p| p.length())
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(best.length(), exhaustive, epsilon = 1e-9);
    }

    #[test]
    fn shortest_is_minimal_over_all_words() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..1000 {
            let q0 = DubinsConfig::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-3.14..3.14),
                rng.gen_range(0.5..4.0),
            );
            let q1 = DubinsConfig::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-3.14..3.14),
                q0.rho_min,
            );
            let best = dubins_shortest(&q0, &q1);
            for w in DubinsWord::ALL {
                if let Some(p) = dubins_word(&q0, &q1, w) {
                    assert!(
                        best.length() <= p.length() + 1e-9,
                        "shortest {} beaten by {w:?} {}",
                        best.length(),
                        p.length()
                    );
                }
            }
        }
    }

    fn empty_grid() -> OccupancyGrid {
        OccupancyGrid::new(150, 150, 0.2, Vector2::new(0.0, 0.0))
    }

    #[test]
    fn empty_map_aligned_endpoints_is_straight() {
        let grid = empty_grid();
        let start = DubinsConfig::new(2.0, 15.0, 0.0, 2.0);
        let goal = DubinsConfig::new(25.0, 15.0, 0.0, 2.0);
        let topo = topo_path_find(&grid, &start, &goal, 0.4).unwrap();
        assert_eq!(topo.waypoints.len(), 2);
        assert_relative_eq!(topo.total_length, 23.0, max_relative = 0.05);
        for (p, _) in &topo.polyline {
            assert!((p.y - 15.0).abs() < 0.5, "polyline wanders: {p:?}");
        }
    }

    #[test]
    fn disc_obstacle_is_avoided() {
        let grid = OccupancyGrid::from_synthetic(&SyntheticMap {
            width_m: 30.0,
            height_m: 30.0,
            resolution: 0.2,
            origin: [0.0, 0.0],
            obstacles: vec![Obstacle::Circle {
                center: [15.0, 15.0],
                radius: 2.0,
            }],
        })
        .inflate(0.8);
        let start = DubinsConfig::new(3.0, 15.0, 0.0, 2.0);
        let goal = DubinsConfig::new(27.0, 15.0, 0.0, 2.0);
        let topo = topo_path_find(&grid, &start, &goal, 0.4).unwrap();
        // Collision-free at fine sampling and longer than the straight line.
        for w in topo.polyline.windows(2) {
            assert!(
                grid.segment_free(w[0].0, w[1].0),
                "guidance polyline collides near {:?}",
                w[0].0
            );
        }
        assert!(topo.total_length > 24.0);
        assert!(topo.total_length >= (goal.position() - start.position()).norm());
    }

    #[test]
    fn sealed_goal_is_no_path() {
        let grid = OccupancyGrid::from_synthetic(&SyntheticMap {
            width_m: 30.0,
            height_m: 30.0,
            resolution: 0.2,
            origin: [0.0, 0.0],
            obstacles: vec![
                Obstacle::Rect {
                    min: [20.0, 0.0],
                    max: [21.0, 30.0],
                },
            ],
        });
        let start = DubinsConfig::new(3.0, 15.0, 0.0, 2.0);
        let goal = DubinsConfig::new(27.0, 15.0, 0.0, 2.0);
        assert!(matches!(
            topo_path_find(&grid, &start, &goal, 0.4),
            Err(GuidanceError::NoPath(_))
        ));
    }

    #[test]
    fn determinism_identical_inputs_identical_waypoints() {
        let grid = OccupancyGrid::from_synthetic(&SyntheticMap {
            width_m: 30.0,
            height_m: 30.0,
            resolution: 0.2,
            origin: [0.0, 0.0],
            obstacles: vec![Obstacle::Circle {
                center: [14.0, 16.0],
                radius: 1.5,
            }],
        })
        .inflate(0.8);
        let start = DubinsConfig::new(3.0, 15.0, 0.3, 2.0);
        let goal = DubinsConfig::new(27.0, 14.0, -0.2, 2.0);
        let a = topo_path_find(&grid, &start, &goal, 0.4).unwrap();
        let b = topo_path_find(&grid, &start, &goal, 0.4).unwrap();
        assert_eq!(a.waypoints.len(), b.waypoints.len());
        for (wa, wb) in a.waypoints.iter().zip(&b.waypoints) {
            assert_eq!(wa.0, wb.0);
            assert_eq!(wa.1, wb.1);
        }
    }
}
