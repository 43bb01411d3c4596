//! # World model
//!
//! Occupancy-grid environment: ingestion from PGM images or synthetic
//! obstacle lists, obstacle inflation through an exact Euclidean distance
//! transform, collision queries for points, segments and sampled
//! trajectories, and 8-connected grid A* with octile costs.
//!
//! Cells outside the grid count as occupied. The grid is immutable after
//! load/inflate; all queries are read-only.

use crate::trajopt::PiecewiseTrajectory;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("no grid path between the queried endpoints")]
    NoPath,
    #[error("map file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("map parse error: {0}")]
    Parse(String),
}

/// Row-major occupancy grid with a Euclidean distance field to the nearest
/// occupied cell (used for push-out gradients).
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: Vector2<f64>,
    width: usize,
    height: usize,
    cells: Vec<bool>,
    /// Distance (m) from each cell center to the nearest occupied cell
    /// center; zero on occupied cells, infinity on an empty map.
    dist: Vec<f64>,
}

/// 8-connected grid path (A* output), start cell first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPath {
    pub cells: Vec<(usize, usize)>,
}

impl GridPath {
    /// Path length in cell units under octile costs.
    pub fn cost_cells(&self) -> f64 {
        self.cells
            .windows(2)
            .map(|w| {
                let dx = w[0].0 as i64 - w[1].0 as i64;
                let dy = w[0].1 as i64 - w[1].1 as i64;
                if dx != 0 && dy != 0 {
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                }
            })
            .sum()
    }
}

/// Report from sampling a trajectory against the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeReport {
    pub free: bool,
    /// Maximal colliding time windows `(t_start, t_end)`.
    pub violations: Vec<(f64, f64)>,
}

/// Synthetic obstacle primitives for JSON scenario maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Obstacle {
    Rect { min: [f64; 2], max: [f64; 2] },
    Circle { center: [f64; 2], radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticMap {
    pub width_m: f64,
    pub height_m: f64,
    pub resolution: f64,
    #[serde(default)]
    pub origin: [f64; 2],
    pub obstacles: Vec<Obstacle>,
}

impl OccupancyGrid {
    /// Empty grid of `width x height` cells.
    pub fn new(width: usize, height: usize, resolution: f64, origin: Vector2<f64>) -> Self {
        assert!(resolution > 0.0 && width >= 1 && height >= 1);
        let cells = vec![false; width * height];
        let mut g = Self {
            resolution,
            origin,
            width,
            height,
            cells,
            dist: Vec::new(),
        };
        g.rebuild_distance_field();
        g
    }

    /// Builds a grid from a synthetic obstacle description.
    pub fn from_synthetic(spec: &SyntheticMap) -> Self {
        let width = (spec.width_m / spec.resolution).round() as usize;
        let height = (spec.height_m / spec.resolution).round() as usize;
        let mut g = Self::new(
            width.max(1),
            height.max(1),
            spec.resolution,
            Vector2::new(spec.origin[0], spec.origin[1]),
        );
        for ob in &spec.obstacles {
            g.stamp(ob);
        }
        g.rebuild_distance_field();
        g
    }

    /// Loads a synthetic map from a JSON file.
    pub fn from_json_file<P: AsRef<Path>>(path: P) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)?;
        let spec: SyntheticMap =
            serde_json::from_str(&text).map_err(|e| WorldError::Parse(e.to_string()))?;
        Ok(Self::from_synthetic(&spec))
    }

    /// Loads a PGM (P2 or P5) occupancy image: pixels below 128 are
    /// occupied; the top image row maps to the highest y row.
    pub fn from_pgm_file<P: AsRef<Path>>(
        path: P,
        resolution: f64,
        origin: Vector2<f64>,
    ) -> Result<Self, WorldError> {
        let bytes = std::fs::read(path)?;
        let (width, height, pixels) = parse_pgm(&bytes)?;
        let mut g = Self::new(width, height, resolution, origin);
        for row in 0..height {
            for col in 0..width {
                if pixels[row * width + col] < 128 {
                    let iy = height - 1 - row;
                    g.cells[iy * width + col] = true;
                }
            }
        }
        g.rebuild_distance_field();
        Ok(g)
    }

    /// Loads a PGM plus its sidecar TOML (`resolution`, `origin = [x, y]`).
    pub fn from_pgm_with_sidecar<P: AsRef<Path>>(pgm: P, sidecar: P) -> Result<Self, WorldError> {
        #[derive(Deserialize)]
        struct Sidecar {
            resolution: f64,
            #[serde(default)]
            origin: [f64; 2],
        }
        let text = std::fs::read_to_string(sidecar)?;
        let sc: Sidecar = toml::from_str(&text).map_err(|e| WorldError::Parse(e.to_string()))?;
        Self::from_pgm_file(pgm, sc.resolution, Vector2::new(sc.origin[0], sc.origin[1]))
    }

    /// Marks an obstacle primitive as occupied (used when building
    /// synthetic maps and when unknown obstacles are revealed).
    pub fn stamp(&mut self, ob: &Obstacle) {
        match *ob {
            Obstacle::Rect { min, max } => {
                let lo = self.world_to_cell_clamped(Vector2::new(min[0], min[1]));
                let hi = self.world_to_cell_clamped(Vector2::new(max[0], max[1]));
                for iy in lo.1..=hi.1 {
                    for ix in lo.0..=hi.0 {
                        self.cells[iy * self.width + ix] = true;
                    }
                }
            }
            Obstacle::Circle { center, radius } => {
                let c = Vector2::new(center[0], center[1]);
                let lo = self.world_to_cell_clamped(c - Vector2::new(radius, radius));
                let hi = self.world_to_cell_clamped(c + Vector2::new(radius, radius));
                for iy in lo.1..=hi.1 {
                    for ix in lo.0..=hi.0 {
                        if (self.cell_center(ix, iy) - c).norm() <= radius {
                            self.cells[iy * self.width + ix] = true;
                        }
                    }
                }
            }
        }
        self.rebuild_distance_field();
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Vector2<f64> {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Cell index of a world point, or `None` outside the grid.
    pub fn world_to_cell(&self, p: Vector2<f64>) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.resolution;
        let fy = (p.y - self.origin.y) / self.resolution;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        (ix < self.width && iy < self.height).then_some((ix, iy))
    }

    fn world_to_cell_clamped(&self, p: Vector2<f64>) -> (usize, usize) {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        let ix = fx.clamp(0.0, (self.width - 1) as f64) as usize;
        let iy = fy.clamp(0.0, (self.height - 1) as f64) as usize;
        (ix, iy)
    }

    /// World position of a cell center.
    pub fn cell_center(&self, ix: usize, iy: usize) -> Vector2<f64> {
        self.origin
            + Vector2::new(
                (ix as f64 + 0.5) * self.resolution,
                (iy as f64 + 0.5) * self.resolution,
            )
    }

    /// Occupancy by cell index; out of range counts as occupied.
    pub fn occupied_cell(&self, ix: i64, iy: i64) -> bool {
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            return true;
        }
        self.cells[iy as usize * self.width + ix as usize]
    }

    /// Occupancy of the cell containing a world point; outside is occupied.
    pub fn occupied_world(&self, p: Vector2<f64>) -> bool {
        match self.world_to_cell(p) {
            Some((ix, iy)) => self.cells[iy * self.width + ix],
            None => true,
        }
    }

    /// Distance (m) from the cell containing `p` to the nearest occupied
    /// cell center; zero outside the grid.
    pub fn clearance(&self, p: Vector2<f64>) -> f64 {
        match self.world_to_cell(p) {
            Some((ix, iy)) => self.dist[iy * self.width + ix],
            None => 0.0,
        }
    }

    /// Central-difference gradient of the clearance field at `p`; points
    /// away from obstacles.
    pub fn clearance_gradient(&self, p: Vector2<f64>) -> Vector2<f64> {
        let Some((ix, iy)) = self.world_to_cell(p) else {
            return Vector2::zeros();
        };
        let d = |x: i64, y: i64| -> f64 {
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                0.0
            } else {
                self.dist[y as usize * self.width + x as usize]
            }
        };
        let (x, y) = (ix as i64, iy as i64);
        let gx = (d(x + 1, y) - d(x - 1, y)) / (2.0 * self.resolution);
        let gy = (d(x, y + 1) - d(x, y - 1)) / (2.0 * self.resolution);
        Vector2::new(gx, gy)
    }

    /// Grid with every cell within `radius` of an occupied cell occupied.
    pub fn inflate(&self, radius: f64) -> OccupancyGrid {
        assert!(radius >= 0.0, "inflation radius must be non-negative");
        let mut out = self.clone();
        for i in 0..self.cells.len() {
            if self.dist[i] <= radius {
                out.cells[i] = self.dist[i] < f64::INFINITY;
            }
        }
        out.rebuild_distance_field();
        out
    }

    /// Exact Euclidean distance transform (Felzenszwalb), in meters.
    fn rebuild_distance_field(&mut self) {
        let (w, h) = (self.width, self.height);
        let inf = f64::INFINITY;
        let mut sq = vec![inf; w * h];
        for (i, &occ) in self.cells.iter().enumerate() {
            if occ {
                sq[i] = 0.0;
            }
        }
        // Columns then rows of 1-D squared-distance transforms.
        let mut buf = vec![0.0; w.max(h)];
        for x in 0..w {
            for y in 0..h {
                buf[y] = sq[y * w + x];
            }
            let out = edt_1d(&buf[..h]);
            for y in 0..h {
                sq[y * w + x] = out[y];
            }
        }
        for y in 0..h {
            buf[..w].copy_from_slice(&sq[y * w..(y + 1) * w]);
            let out = edt_1d(&buf[..w]);
            sq[y * w..(y + 1) * w].copy_from_slice(&out);
        }
        self.dist = sq
            .into_iter()
            .map(|d| {
                if d == inf {
                    inf
                } else {
                    d.sqrt() * self.resolution
                }
            })
            .collect();
    }

    /// True iff every cell crossed by the segment `a -> b` is free.
    /// Points outside the grid are occupied.
    pub fn segment_free(&self, a: Vector2<f64>, b: Vector2<f64>) -> bool {
        let (Some(ca), Some(cb)) = (self.world_to_cell(a), self.world_to_cell(b)) else {
            return false;
        };
        if self.cells[ca.1 * self.width + ca.0] || self.cells[cb.1 * self.width + cb.0] {
            return false;
        }
        let mut ix = ca.0 as i64;
        let mut iy = ca.1 as i64;
        let (ex, ey) = (cb.0 as i64, cb.1 as i64);
        let d = b - a;
        // Displacements below float noise cannot cross a boundary.
        let dx = if d.x.abs() < 1e-12 { 0.0 } else { d.x };
        let dy = if d.y.abs() < 1e-12 { 0.0 } else { d.y };
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        // Boundary distances from the same fractional arithmetic as
        // `world_to_cell`, so they are non-negative by construction.
        let frac = |coord: f64, o: f64| -> f64 {
            let f = (coord - o) / self.resolution;
            (f - f.floor()).clamp(0.0, 1.0)
        };
        let mut t_max_x = if dx == 0.0 {
            f64::INFINITY
        } else {
            let fr = frac(a.x, self.origin.x);
            let cells_to_edge = if dx > 0.0 { 1.0 - fr } else { fr };
            cells_to_edge * self.resolution / dx.abs()
        };
        let mut t_max_y = if dy == 0.0 {
            f64::INFINITY
        } else {
            let fr = frac(a.y, self.origin.y);
            let cells_to_edge = if dy > 0.0 { 1.0 - fr } else { fr };
            cells_to_edge * self.resolution / dy.abs()
        };
        let t_delta_x = if dx == 0.0 {
            f64::INFINITY
        } else {
            (self.resolution / dx).abs()
        };
        let t_delta_y = if dy == 0.0 {
            f64::INFINITY
        } else {
            (self.resolution / dy).abs()
        };
        // Residual float pathologies bail out to dense sampling instead of
        // trusting the walk.
        let lo_x = ix.min(ex) - 1;
        let hi_x = ix.max(ex) + 1;
        let lo_y = iy.min(ey) - 1;
        let hi_y = iy.max(ey) + 1;
        let max_steps = 2 * (self.width + self.height) + 4;
        let mut walked = 0;
        loop {
            if ix == ex && iy == ey {
                return true;
            }
            walked += 1;
            if walked > max_steps {
                break;
            }
            if (t_max_x - t_max_y).abs() < 1e-12 && t_max_x.is_finite() {
                // Exact corner crossing: conservatively require both
                // adjacent cells free as well.
                if self.occupied_cell(ix + step_x, iy) || self.occupied_cell(ix, iy + step_y) {
                    return false;
                }
                ix += step_x;
                iy += step_y;
                t_max_x += t_delta_x;
                t_max_y += t_delta_y;
            } else if t_max_x < t_max_y {
                ix += step_x;
                t_max_x += t_delta_x;
            } else {
                iy += step_y;
                t_max_y += t_delta_y;
            }
            if ix < lo_x || ix > hi_x || iy < lo_y || iy > hi_y {
                break;
            }
            if self.occupied_cell(ix, iy) {
                return false;
            }
        }
        // Fallback: dense sampling at half-resolution.
        let n = ((b - a).norm() / (0.5 * self.resolution)).ceil().max(1.0) as usize;
        (0..=n).all(|k| !self.occupied_world(a + d * (k as f64 / n as f64)))
    }

    /// Samples the trajectory every `dt_check` seconds and chains
    /// [`segment_free`] between consecutive samples. Violations are merged
    /// into maximal colliding time windows.
    pub fn trajectory_free(&self, traj: &PiecewiseTrajectory, dt_check: f64) -> FreeReport {
        assert!(dt_check > 0.0);
        let total = traj.duration();
        let n = (total / dt_check).ceil().max(1.0) as usize;
        let times: Vec<f64> = (0..=n).map(|k| (k as f64 / n as f64) * total).collect();
        let points: Vec<Vector2<f64>> = times.iter().map(|&t| traj.position(t)).collect();
        let mut violations: Vec<(f64, f64)> = Vec::new();
        for k in 0..n {
            if !self.segment_free(points[k], points[k + 1]) {
                match violations.last_mut() {
                    Some(last) if last.1 >= times[k] => last.1 = times[k + 1],
                    _ => violations.push((times[k], times[k + 1])),
                }
            }
        }
        FreeReport {
            free: violations.is_empty(),
            violations,
        }
    }

    /// 8-connected A* between the cells containing `start` and `goal`,
    /// octile edge costs, admissible octile heuristic, deterministic
    /// insertion-order tie-breaking. Diagonal steps additionally require
    /// both orthogonal neighbors free.
    pub fn astar(&self, start: Vector2<f64>, goal: Vector2<f64>) -> Result<GridPath, WorldError> {
        let (Some(s), Some(g)) = (self.world_to_cell(start), self.world_to_cell(goal)) else {
            return Err(WorldError::NoPath);
        };
        self.astar_cells(s, g)
    }

    pub fn astar_cells(
        &self,
        s: (usize, usize),
        g: (usize, usize),
    ) -> Result<GridPath, WorldError> {
        if self.occupied_cell(s.0 as i64, s.1 as i64) || self.occupied_cell(g.0 as i64, g.1 as i64)
        {
            return Err(WorldError::NoPath);
        }
        let idx = |c: (usize, usize)| c.1 * self.width + c.0;
        let octile = |a: (usize, usize), b: (usize, usize)| -> f64 {
            let dx = (a.0 as f64 - b.0 as f64).abs();
            let dy = (a.1 as f64 - b.1 as f64).abs();
            dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
        };

        #[derive(PartialEq)]
        struct Entry {
            f: f64,
            seq: u64,
            cell: (usize, usize),
        }
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                // Reversed for a min-heap; ties by insertion order.
                other
                    .f
                    .total_cmp(&self.f)
                    .then(other.seq.cmp(&self.seq))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut dist = vec![f64::INFINITY; self.cells.len()];
        let mut parent: Vec<u32> = vec![u32::MAX; self.cells.len()];
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        dist[idx(s)] = 0.0;
        heap.push(Entry {
            f: octile(s, g),
            seq,
            cell: s,
        });
        while let Some(Entry { cell, .. }) = heap.pop() {
            if cell == g {
                let mut cells = vec![g];
                let mut cur = idx(g);
                while parent[cur] != u32::MAX {
                    cur = parent[cur] as usize;
                    cells.push((cur % self.width, cur / self.width));
                }
                cells.reverse();
                return Ok(GridPath { cells });
            }
            let d_here = dist[idx(cell)];
            for (dx, dy) in [
                (1i64, 0i64),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ] {
                let nx = cell.0 as i64 + dx;
                let ny = cell.1 as i64 + dy;
                if self.occupied_cell(nx, ny) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal
                    && (self.occupied_cell(cell.0 as i64 + dx, cell.1 as i64)
                        || self.occupied_cell(cell.0 as i64, cell.1 as i64 + dy))
                {
                    continue;
                }
                let step = if diagonal {
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
                let ncell = (nx as usize, ny as usize);
                let nd = d_here + step;
                if nd < dist[idx(ncell)] - 1e-12 {
                    dist[idx(ncell)] = nd;
                    parent[idx(ncell)] = idx(cell) as u32;
                    seq += 1;
                    heap.push(Entry {
                        f: nd + octile(ncell, g),
                        seq,
                        cell: ncell,
                    });
                }
            }
        }
        Err(WorldError::NoPath)
    }
}

/// 1-D squared distance transform of a sampled function (Felzenszwalb &
/// Huttenlocher). Infinite entries (no source in that row/column yet) are
/// skipped; the lower envelope only ever holds finite parabolas.
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let inf = f64::INFINITY;
    let mut out = vec![inf; n];
    let Some(first) = (0..n).find(|&i| f[i] < inf) else {
        return out;
    };
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = inf;
    let sect = |p: usize, q: usize| -> f64 {
        (f[q] + (q * q) as f64 - f[p] - (p * p) as f64) / (2.0 * (q as f64 - p as f64))
    };
    for q in first + 1..n {
        if f[q] == inf {
            continue;
        }
        let mut s = sect(v[k], q);
        while s <= z[k] {
            // z[0] is -inf and all hull parabolas are finite, so k > 0 here.
            k -= 1;
            s = sect(v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        out[q] = dq * dq + f[v[k]];
    }
    out
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), WorldError> {
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    // Header: magic, width, height, maxval, honoring '#' comments.
    while tokens.len() < 4 && pos < bytes.len() {
        let b = bytes[pos];
        if b == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            pos += 1;
        } else {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
        }
    }
    if tokens.len() < 4 {
        return Err(WorldError::Parse("truncated PGM header".into()));
    }
    let magic = tokens[0].as_str();
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| WorldError::Parse("bad width".into()))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| WorldError::Parse("bad height".into()))?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| WorldError::Parse("bad maxval".into()))?;
    if maxval == 0 || maxval > 255 {
        return Err(WorldError::Parse(format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    match magic {
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals: Vec<u16> = text
                .split_ascii_whitespace()
                .take(n)
                .map(|t| t.parse::<u16>())
                .collect::<Result<_, _>>()
                .map_err(|_| WorldError::Parse("bad P2 pixel".into()))?;
            if vals.len() < n {
                return Err(WorldError::Parse("truncated P2 data".into()));
            }
            Ok((width, height, vals))
        }
        "P5" => {
            pos += 1; // single whitespace after maxval
            if bytes.len() < pos + n {
                return Err(WorldError::Parse("truncated P5 data".into()));
            }
            Ok((
                width,
                height,
                bytes[pos..pos + n].iter().map(|&b| b as u16).collect(),
            ))
        }
        other => Err(WorldError::Parse(format!("unsupported magic {other}"))),
    }
}
