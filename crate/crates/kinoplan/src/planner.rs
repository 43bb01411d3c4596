//! # Kinodynamic planner
//!
//! Bidirectional dynamic RRT* over the flat space: two trees grow from the
//! start and the goal toward shared corridor samples, steering with the
//! closed-form minimum-jerk boundary value solver and checking collision
//! and dynamic limits on every candidate edge. Infeasible extensions are
//! optionally repaired by the local trajectory optimizer (one attempt per
//! edge), nearby nodes are rewired through cheaper parents, and the first
//! connection keeps improving for a configurable number of refinement
//! iterations before the best recalled trajectory receives the global
//! optimization and smoothing passes.
//!
//! Tree evolution never reads the wall clock, so a fixed seed reproduces
//! the same result bit for bit; the time budget only aborts runs that have
//! not connected yet.

use crate::guidance::{self, DubinsConfig, GuidanceError, TopoPath};
use crate::obvp::{self, BoundaryState, QuinticSegment};
use crate::trajopt::{self, check_feasibility, OptEnv, OptWeights, PiecewiseTrajectory};
use crate::vessel::{VesselParams, VesselState};
use crate::worldmap::OccupancyGrid;
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PlanFailure {
    #[error("no topological path between start and goal")]
    NoPath,
    #[error("time budget exhausted before the trees connected")]
    Timeout,
}

/// Planner configuration; the ablation switches select the Table-style
/// variants (baseline, +local, +global, full).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Hard iteration cap `n`.
    pub max_iterations: usize,
    /// Extra iterations spent improving after the first connection.
    pub refine_iterations: usize,
    /// Sampling corridor radius around the guidance path (m).
    pub corridor_width: f64,
    /// Neighbor ball radius for extension and rewiring (m).
    pub neighbor_radius: f64,
    /// Position tolerance for the direct goal splice (m).
    pub goal_tolerance_pos: f64,
    /// Velocity tolerance for the direct goal splice (m/s).
    pub goal_tolerance_vel: f64,
    /// Time weight of the segment cost.
    pub sigma: f64,
    pub rng_seed: u64,
    /// Wall-clock abort for runs without a connection (ms).
    pub time_budget_ms: u64,
    pub enable_local_repair: bool,
    pub enable_global_opt: bool,
    pub weights: OptWeights,
    /// Duration bracket for free-time steering (s).
    pub t_bounds: (f64, f64),
    /// Feasibility sampling step (s).
    pub dt_check: f64,
    /// Obstacle inflation radius of the supplied grid (m); push-out steps
    /// use half of it.
    pub inflation_radius: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            max_iterations: 600,
            refine_iterations: 0,
            corridor_width: 6.0,
            neighbor_radius: 8.0,
            goal_tolerance_pos: 0.5,
            goal_tolerance_vel: 0.2,
            sigma: 2.0,
            rng_seed: 0,
            time_budget_ms: 10_000,
            enable_local_repair: true,
            enable_global_opt: true,
            weights: OptWeights::default(),
            t_bounds: (0.5, 30.0),
            dt_check: 0.05,
            inflation_radius: 0.8,
        }
    }
}

/// Table-style quantities of one planning run. The wall-clock time is kept
/// out of the serialized form so that metric files are reproducible; it is
/// reported separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub traj_length: f64,
    pub traj_time: f64,
    pub traj_cost: f64,
    /// Nodes retained in the trees over total sampling attempts.
    pub node_utilization: f64,
    #[serde(skip_serializing, default)]
    pub algo_time_ms: f64,
    pub success: bool,
    pub failure: Option<PlanFailure>,
    pub iterations: usize,
    /// Iteration at which the trees first connected.
    pub first_solution_iteration: Option<usize>,
    pub samples: usize,
    pub nodes: usize,
    pub corridor_fallbacks: usize,
}

/// Result of one planning query.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectory: Option<PiecewiseTrajectory>,
    pub metrics: PlanMetrics,
    /// Best solution cost after each iteration (infinity before the first
    /// connection).
    pub best_cost_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Node {
    state: BoundaryState,
    parent: Option<usize>,
    children: Vec<usize>,
    /// Edge from the parent in forward time (start tree) or to the parent
    /// in forward time (goal tree); empty on roots.
    edge: Vec<QuinticSegment>,
    edge_cost: f64,
    cost_to_root: f64,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    /// Goal tree edges run child -> parent in forward time.
    toward_goal: bool,
}

impl Tree {
    fn new(root: BoundaryState, toward_goal: bool) -> Self {
        Self {
            nodes: vec![Node {
                state: root,
                parent: None,
                children: Vec::new(),
                edge: Vec::new(),
                edge_cost: 0.0,
                cost_to_root: 0.0,
            }],
            toward_goal,
        }
    }

    /// Nearest nodes within `radius` (at most `cap`, sorted by distance);
    /// falls back to the single nearest node when the ball is empty.
    fn neighbors(&self, pos: &Vector2<f64>, radius: f64, cap: usize) -> Vec<(usize, f64)> {
        let mut ids: Vec<(usize, f64)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, (n.state.p - pos).norm()))
            .filter(|(_, d)| *d <= radius)
            .collect();
        ids.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if ids.is_empty() {
            if let Some(nearest) = self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (i, (n.state.p - pos).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
            {
                ids.push(nearest);
            }
        }
        ids.truncate(cap);
        ids
    }

    fn insert(&mut self, state: BoundaryState, parent: usize, edge: Vec<QuinticSegment>) -> usize {
        let edge_cost: f64 = edge.iter().map(|s| s.cost).sum();
        let cost_to_root = self.nodes[parent].cost_to_root + edge_cost;
        let idx = self.nodes.len();
        self.nodes.push(Node {
            state,
            parent: Some(parent),
            children: Vec::new(),
            edge,
            edge_cost,
            cost_to_root,
        });
        self.nodes[parent].children.push(idx);
        idx
    }

    /// Re-parents `node` and shifts the whole subtree's cost.
    fn reparent(&mut self, node: usize, new_parent: usize, edge: Vec<QuinticSegment>) {
        let edge_cost: f64 = edge.iter().map(|s| s.cost).sum();
        let old_parent = self.nodes[node].parent.expect("roots are never rewired");
        self.nodes[old_parent].children.retain(|&c| c != node);
        let new_cost = self.nodes[new_parent].cost_to_root + edge_cost;
        let delta = new_cost - self.nodes[node].cost_to_root;
        self.nodes[node].parent = Some(new_parent);
        self.nodes[node].edge = edge;
        self.nodes[node].edge_cost = edge_cost;
        self.nodes[new_parent].children.push(node);
        let mut stack = vec![node];
        while let Some(i) = stack.pop() {
            self.nodes[i].cost_to_root += delta;
            stack.extend(self.nodes[i].children.iter().copied());
        }
    }

    /// Forward-time segment chain from the root to `node` (start tree) or
    /// from `node` to the root (goal tree).
    fn chain(&self, node: usize) -> Vec<QuinticSegment> {
        let mut path_nodes = Vec::new();
        let mut cur = Some(node);
        while let Some(i) = cur {
            path_nodes.push(i);
            cur = self.nodes[i].parent;
        }
        let mut segs = Vec::new();
        if self.toward_goal {
            // node -> ... -> root, edges already forward in time.
            for &i in &path_nodes {
                segs.extend(self.nodes[i].edge.iter().cloned());
            }
        } else {
            for &i in path_nodes.iter().rev() {
                segs.extend(self.nodes[i].edge.iter().cloned());
            }
        }
        segs
    }
}

/// Cap on the neighbor set per extension/rewire.
const MAX_NEIGHBORS: usize = 10;
/// Margin subtracted from the dynamic limits for internally accepted
/// edges (absorbs sampling alignment differences in later checks).
const LIMIT_MARGIN: f64 = 0.03;

fn sample_speed_cap_for(params: &VesselParams) -> f64 {
    (params.v_max - LIMIT_MARGIN).max(0.1)
}

#[derive(Debug, Clone)]
enum Candidate {
    /// The shared sample exists in both trees.
    Pair { start_node: usize, goal_node: usize },
    /// A start-tree node spliced straight onto the goal state.
    Splice {
        start_node: usize,
        segs: Vec<QuinticSegment>,
        splice_cost: f64,
    },
}

/// Stateful planner; supports environment updates and restarts from a new
/// start state while keeping the goal tree.
pub struct Planner {
    cfg: PlanConfig,
    params: VesselParams,
    grid: OccupancyGrid,
    start: BoundaryState,
    goal: BoundaryState,
    topo: TopoPath,
    start_tree: Tree,
    goal_tree: Tree,
    rng: ChaCha8Rng,
    candidates: Vec<Candidate>,
    samples: usize,
    nodes_added: usize,
    corridor_fallbacks: usize,
    /// Extension outcome counters: direct, re-timed, QP-repaired, failed.
    extension_stats: [usize; 4],
    /// Temporary micro-profile: [steer, feas, repair, rewire] seconds.
    pub prof: [f64; 4],
    iterations_run: usize,
    first_solution_iter: Option<usize>,
    best_cost_trace: Vec<f64>,
}

/// Flat-space boundary state of a vessel state (world velocity, zero
/// acceleration).
pub fn lift_state(s: &VesselState) -> BoundaryState {
    BoundaryState::new(s.position(), s.world_velocity(), Vector2::zeros())
}

/// Flat lift of a query endpoint. At rest the heading is otherwise lost
/// (zero velocity and acceleration leave it free), so a small
/// heading-aligned acceleration pins the initial flat heading to the
/// vessel's actual bow direction.
fn lift_endpoint(s: &VesselState, a_max: f64) -> BoundaryState {
    let mut b = lift_state(s);
    if b.v.norm() < 0.05 {
        let (sp, cp) = s.psi.sin_cos();
        b.a = 0.25 * a_max * Vector2::new(cp, sp);
    }
    b
}

fn heading_of(s: &VesselState) -> f64 {
    let w = s.world_velocity();
    if w.norm() > 1e-6 {
        w.y.atan2(w.x)
    } else {
        s.psi
    }
}

impl Planner {
    pub fn new(
        grid: OccupancyGrid,
        params: &VesselParams,
        start: &VesselState,
        goal: &VesselState,
        cfg: PlanConfig,
    ) -> Result<Self, PlanFailure> {
        let rho = (params.v_max * params.v_max / params.a_max).max(1.0);
        let topo = guidance::topo_path_find(
            &grid,
            &DubinsConfig::new(start.x, start.y, heading_of(start), rho),
            &DubinsConfig::new(goal.x, goal.y, heading_of(goal), rho),
            cfg.inflation_radius / 2.0,
        )
        .map_err(|e| match e {
            GuidanceError::NoPath(_) => PlanFailure::NoPath,
            GuidanceError::PushoutFailed(_) => PlanFailure::NoPath,
        })?;
        let start_flat = lift_endpoint(start, params.a_max);
        let goal_flat = lift_state(goal);
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        Ok(Self {
            params: *params,
            start_tree: Tree::new(start_flat, false),
            goal_tree: Tree::new(goal_flat, true),
            start: start_flat,
            goal: goal_flat,
            topo,
            grid,
            rng,
            cfg,
            candidates: Vec::new(),
            samples: 0,
            nodes_added: 0,
            corridor_fallbacks: 0,
            extension_stats: [0; 4],
            prof: [0.0; 4],
            iterations_run: 0,
            first_solution_iter: None,
            best_cost_trace: Vec::new(),
        })
    }

    /// Extension outcome counters `[direct, re-timed, repaired, failed]`.
    pub fn extension_stats(&self) -> [usize; 4] {
        self.extension_stats
    }

    /// Internal feasibility environment. The dynamic limits carry a small
    /// margin so edges accepted under per-segment sampling also satisfy
    /// the exact limits under any later sampling alignment.
    fn opt_env(&self) -> OptEnv<'_> {
        OptEnv {
            grid: &self.grid,
            v_max: (self.params.v_max - LIMIT_MARGIN).max(0.1),
            a_max: (self.params.a_max - LIMIT_MARGIN).max(0.05),
            push_dist: self.cfg.inflation_radius / 2.0,
            dt_check: self.cfg.dt_check,
            sigma: self.cfg.sigma,
        }
    }

    fn sample_speed_cap(&self) -> f64 {
        sample_speed_cap_for(&self.params)
    }

    /// Draws one corridor sample: position in the disc union around the
    /// guidance path, velocity within +-45 degrees of the local tangent,
    /// zero acceleration.
    fn sample_state(&mut self) -> BoundaryState {
        let polyline = &self.topo.polyline;
        for _ in 0..1000 {
            let idx = self.rng.gen_range(0..polyline.len());
            let (center, tangent) = polyline[idx];
            let radius = self.cfg.corridor_width * self.rng.gen::<f64>().sqrt();
            let angle = self.rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let pos = center + radius * Vector2::new(angle.cos(), angle.sin());
            if self.grid.occupied_world(pos) {
                continue;
            }
            let v_angle = tangent
                + self
                    .rng
                    .gen_range(-std::f64::consts::FRAC_PI_4..std::f64::consts::FRAC_PI_4);
            let speed = self.sample_speed_cap() * self.rng.gen::<f64>().sqrt();
            return BoundaryState::new(
                pos,
                speed * Vector2::new(v_angle.cos(), v_angle.sin()),
                Vector2::zeros(),
            );
        }
        // Corridor exhausted: uniform free-space fallback.
        self.corridor_fallbacks += 1;
        let span_x = self.grid.width() as f64 * self.grid.resolution();
        let span_y = self.grid.height() as f64 * self.grid.resolution();
        let o = self.grid.origin();
        for _ in 0..10_000 {
            let pos = Vector2::new(
                o.x + self.rng.gen::<f64>() * span_x,
                o.y + self.rng.gen::<f64>() * span_y,
            );
            if !self.grid.occupied_world(pos) {
                let angle = self.rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                let speed = self.sample_speed_cap() * self.rng.gen::<f64>().sqrt();
                return BoundaryState::new(
                    pos,
                    speed * Vector2::new(angle.cos(), angle.sin()),
                    Vector2::zeros(),
                );
            }
        }
        // Fully occupied world; return the start state (extension will fail).
        self.start
    }

    fn steer(&self, from: &BoundaryState, to: &BoundaryState) -> QuinticSegment {
        obvp::optimal_time(from, to, self.cfg.sigma, self.cfg.t_bounds)
            .expect("valid time bounds")
            .1
    }

    fn edge_feasible(&self, segs: &[QuinticSegment]) -> bool {
        trajopt::chain_feasible(segs, &self.opt_env())
    }

    /// Lower bound on the cost of any feasible edge covering `dist`:
    /// a speed-limited segment cannot be shorter than `dist / v_max`.
    fn edge_cost_bound(&self, dist: f64) -> f64 {
        self.cfg.sigma * (dist / self.params.v_max).max(self.cfg.t_bounds.0)
    }

    /// One tree-growth attempt toward `x_rand`; returns the inserted node.
    ///
    /// Neighbors are visited in optimistic-cost order with early exit.
    /// When every candidate edge is infeasible, the cheapest one gets a
    /// single local-repair attempt (when enabled).
    fn try_extend(&mut self, toward_goal: bool, x_rand: &BoundaryState) -> Option<usize> {
        let tree = if toward_goal {
            &self.goal_tree
        } else {
            &self.start_tree
        };
        let mut cands: Vec<(usize, f64)> = tree
            .neighbors(&x_rand.p, self.cfg.neighbor_radius, MAX_NEIGHBORS)
            .into_iter()
            .map(|(nid, dist)| (nid, tree.nodes[nid].cost_to_root + self.edge_cost_bound(dist)))
            .collect();
        cands.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let mut best: Option<(usize, Vec<QuinticSegment>, f64)> = None;
        let mut blocked: Vec<(usize, QuinticSegment, f64, trajopt::ViolationKind)> = Vec::new();
        let mut prof_steer = 0.0;
        let mut prof_feas = 0.0;
        for (nid, bound) in cands {
            if let Some((_, _, c)) = &best {
                if bound >= *c {
                    break;
                }
            }
            let n_state = tree.nodes[nid].state;
            let t_steer = Instant::now();
            let seg = if toward_goal {
                self.steer(x_rand, &n_state)
            } else {
                self.steer(&n_state, x_rand)
            };
            prof_steer += t_steer.elapsed().as_secs_f64();
            let total = tree.nodes[nid].cost_to_root + seg.cost;
            if best.as_ref().map_or(false, |(_, _, c)| total >= *c) {
                continue;
            }
            let t_feas = Instant::now();
            let violation = trajopt::chain_violation(std::slice::from_ref(&seg), &self.opt_env());
            prof_feas += t_feas.elapsed().as_secs_f64();
            match violation {
                None => best = Some((nid, vec![seg], total)),
                Some(kind) if self.cfg.enable_local_repair => {
                    blocked.push((nid, seg, total, kind));
                }
                Some(_) => {}
            }
        }
        let mut outcome = if best.is_some() { 0 } else { 3 };
        self.prof[0] += prof_steer;
        self.prof[1] += prof_feas;
        if best.is_none() {
            // All candidate edges blocked: repair the cheapest one, but
            // only when the sample advances the tree toward the opposite
            // root (repairing interior samples rarely pays off).
            let other_root = if toward_goal { self.start.p } else { self.goal.p };
            blocked.sort_by(|a, b| a.2.total_cmp(&b.2));
            let t_rep = Instant::now();
            for (nid, seg, _, kind) in blocked.into_iter().take(1) {
                let advances = (x_rand.p - other_root).norm() + 1e-9
                    < (tree.nodes[nid].state.p - other_root).norm();
                if !advances {
                    continue;
                }
                if let Some((chain, retimed)) = self.repair_edge(&seg, kind) {
                    let cost: f64 = tree.nodes[nid].cost_to_root
                        + chain.iter().map(|s| s.cost).sum::<f64>();
                    best = Some((nid, chain, cost));
                    outcome = if retimed { 1 } else { 2 };
                    break;
                }
            }
            self.prof[2] += t_rep.elapsed().as_secs_f64();
        }
        self.extension_stats[outcome] += 1;
        let (parent, chain, _) = best?;
        let tree = if toward_goal {
            &mut self.goal_tree
        } else {
            &mut self.start_tree
        };
        Some(tree.insert(*x_rand, parent, chain))
    }

    /// Local repair of one infeasible steering edge. Pure dynamic-limit
    /// overshoots get the cheap closed-form fix first (re-time the segment
    /// at stretched durations); anything still colliding goes through the
    /// quadratic repair with free interior knots.
    fn repair_edge(
        &self,
        seg: &QuinticSegment,
        kind: trajopt::ViolationKind,
    ) -> Option<(Vec<QuinticSegment>, bool)> {
        let env = self.opt_env();
        match kind {
            trajopt::ViolationKind::Dynamic => {
                // Re-time at stretched durations. Bernstein bounds certify
                // the dynamics without sampling; the collision scan can run
                // coarse because inflation dwarfs the chord sagitta.
                let mut probe_env = env;
                probe_env.dt_check = env.dt_check * 3.0;
                let s0 = seg.boundary_at(0.0);
                let s1 = seg.boundary_at(seg.duration);
                let stretches = [1.5, 2.4];
                for (i, &stretch) in stretches.iter().enumerate() {
                    let duration = (seg.duration * stretch).min(self.cfg.t_bounds.1);
                    let Ok(retimed) = obvp::solve_fixed_time(&s0, &s1, duration, self.cfg.sigma)
                    else {
                        continue;
                    };
                    let certified = retimed.derivative_bound(1) <= env.v_max
                        && retimed.derivative_bound(2) <= env.a_max;
                    let dynamics_ok = certified
                        || (i + 1 == stretches.len()
                            && trajopt::chain_feasible(std::slice::from_ref(&retimed), &env));
                    if dynamics_ok
                        && trajopt::chain_collision_free(std::slice::from_ref(&retimed), &probe_env)
                    {
                        return Some((vec![retimed], true));
                    }
                }
                None
            }
            trajopt::ViolationKind::Collision => {
                trajopt::local_repair_rounds(seg, &env, &self.cfg.weights, 2, true)
                    .ok()
                    .map(|chain| (chain, false))
            }
        }
    }

    /// RRT* rewiring of the neighbors of a freshly inserted node.
    fn rewire(&mut self, toward_goal: bool, new_idx: usize) {
        let (neighbor_ids, new_cost, new_state) = {
            let tree = if toward_goal {
                &self.goal_tree
            } else {
                &self.start_tree
            };
            let node = &tree.nodes[new_idx];
            (
                tree.neighbors(&node.state.p, self.cfg.neighbor_radius, MAX_NEIGHBORS),
                node.cost_to_root,
                node.state,
            )
        };
        for (nid, dist) in neighbor_ids {
            if nid == new_idx {
                continue;
            }
            let (is_root, parent, old_cost, n_state) = {
                let tree = if toward_goal {
                    &self.goal_tree
                } else {
                    &self.start_tree
                };
                let n = &tree.nodes[nid];
                (n.parent.is_none(), n.parent, n.cost_to_root, n.state)
            };
            if is_root || parent == Some(new_idx) {
                continue;
            }
            // Optimistic bound before paying for the steer.
            if new_cost + self.edge_cost_bound(dist) + 1e-12 >= old_cost {
                continue;
            }
            let seg = if toward_goal {
                self.steer(&n_state, &new_state)
            } else {
                self.steer(&new_state, &n_state)
            };
            let candidate = new_cost + seg.cost;
            if candidate + 1e-12 >= old_cost {
                continue;
            }
            if !self.edge_feasible(std::slice::from_ref(&seg)) {
                continue;
            }
            let tree = if toward_goal {
                &mut self.goal_tree
            } else {
                &mut self.start_tree
            };
            tree.reparent(nid, new_idx, vec![seg]);
        }
    }

    fn candidate_cost(&self, c: &Candidate) -> f64 {
        match c {
            Candidate::Pair {
                start_node,
                goal_node,
            } => {
                self.start_tree.nodes[*start_node].cost_to_root
                    + self.goal_tree.nodes[*goal_node].cost_to_root
            }
            Candidate::Splice {
                start_node,
                splice_cost,
                ..
            } => self.start_tree.nodes[*start_node].cost_to_root + splice_cost,
        }
    }

    fn best_candidate(&self) -> Option<(usize, f64)> {
        self.candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (i, self.candidate_cost(c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn recall(&self, c: &Candidate) -> PiecewiseTrajectory {
        let segs = match c {
            Candidate::Pair {
                start_node,
                goal_node,
            } => {
                let mut segs = self.start_tree.chain(*start_node);
                segs.extend(self.goal_tree.chain(*goal_node));
                segs
            }
            Candidate::Splice {
                start_node, segs, ..
            } => {
                let mut chain = self.start_tree.chain(*start_node);
                chain.extend(segs.iter().cloned());
                chain
            }
        };
        PiecewiseTrajectory::new(segs)
    }

    /// Runs the planning loop and returns the best solution found.
    pub fn run(&mut self) -> PlanResult {
        let t0 = Instant::now();
        let budget = std::time::Duration::from_millis(self.cfg.time_budget_ms);
        for iter in 1..=self.cfg.max_iterations {
            if let Some(first) = self.first_solution_iter {
                if iter > first + self.cfg.refine_iterations {
                    break;
                }
            } else if t0.elapsed() > budget {
                break;
            }
            self.iterations_run = iter;
            let x_rand = self.sample_state();
            self.samples += 1;

            let s_idx = self.try_extend(false, &x_rand);
            if let Some(i) = s_idx {
                self.rewire(false, i);
            }
            let g_idx = self.try_extend(true, &x_rand);
            if let Some(i) = g_idx {
                self.rewire(true, i);
            }
            if s_idx.is_some() || g_idx.is_some() {
                self.nodes_added += 1;
            }

            match (s_idx, g_idx) {
                (Some(s), Some(g)) => {
                    self.candidates.push(Candidate::Pair {
                        start_node: s,
                        goal_node: g,
                    });
                    self.first_solution_iter.get_or_insert(iter);
                }
                (Some(s), None) => {
                    // Direct goal splice when the sample lands close to the
                    // goal state.
                    let near_pos = (x_rand.p - self.goal.p).norm() <= self.cfg.goal_tolerance_pos;
                    let near_vel = (x_rand.v - self.goal.v).norm() <= self.cfg.goal_tolerance_vel;
                    if near_pos && near_vel {
                        let seg = self.steer(&x_rand, &self.goal);
                        let chain = vec![seg];
                        if self.edge_feasible(&chain) {
                            let splice_cost = chain.iter().map(|x| x.cost).sum();
                            self.candidates.push(Candidate::Splice {
                                start_node: s,
                                segs: chain,
                                splice_cost,
                            });
                            self.first_solution_iter.get_or_insert(iter);
                        }
                    }
                }
                _ => {}
            }
            let best = self
                .best_candidate()
                .map(|(_, c)| c)
                .unwrap_or(f64::INFINITY);
            self.best_cost_trace.push(best);
        }

        if self.first_solution_iter.is_some() {
            // Sample-free improvement: sweep rewiring over the existing
            // nodes (cheap thanks to the cost-bound prefilter).
            for _ in 0..0 {
                for tree_kind in [false, true] {
                    let count = if tree_kind {
                        self.goal_tree.nodes.len()
                    } else {
                        self.start_tree.nodes.len()
                    };
                    for idx in 1..count {
                        self.rewire(tree_kind, idx);
                    }
                }
                let best = self
                    .best_candidate()
                    .map(|(_, c)| c)
                    .unwrap_or(f64::INFINITY);
                self.best_cost_trace.push(best);
            }
        }

        self.finish(t0)
    }

    fn finish(&mut self, t0: Instant) -> PlanResult {
        let node_count = self.start_tree.nodes.len() + self.goal_tree.nodes.len() - 2;
        let utilization = if self.samples > 0 {
            (self.nodes_added as f64 / self.samples as f64).min(1.0)
        } else {
            0.0
        };
        let base_metrics = |success: bool, failure: Option<PlanFailure>| PlanMetrics {
            traj_length: 0.0,
            traj_time: 0.0,
            traj_cost: 0.0,
            node_utilization: utilization,
            algo_time_ms: 0.0,
            success,
            failure,
            iterations: self.iterations_run,
            first_solution_iteration: self.first_solution_iter,
            samples: self.samples,
            nodes: node_count,
            corridor_fallbacks: self.corridor_fallbacks,
        };
        let Some((best_idx, _)) = self.best_candidate() else {
            let mut metrics = base_metrics(false, Some(PlanFailure::Timeout));
            metrics.algo_time_ms = t0.elapsed().as_secs_f64() * 1e3;
            return PlanResult {
                trajectory: None,
                metrics,
                best_cost_trace: self.best_cost_trace.clone(),
            };
        };
        let recalled = self.recall(&self.candidates[best_idx].clone());
        let final_traj = if self.cfg.enable_global_opt {
            let shortened = self.shortcut(recalled);
            let env = self.opt_env();
            let optimized = match trajopt::optimize(&shortened, &env, &self.cfg.weights) {
                Ok(t) => t,
                Err(_) => shortened.clone(),
            };
            trajopt::smooth_pass(&optimized, &env, &self.cfg.weights)
        } else {
            recalled
        };
        let mut metrics = base_metrics(true, None);
        metrics.traj_length = final_traj.length(0.02);
        metrics.traj_time = final_traj.duration();
        metrics.traj_cost = final_traj.cost();
        metrics.algo_time_ms = t0.elapsed().as_secs_f64() * 1e3;
        PlanResult {
            trajectory: Some(final_traj),
            metrics,
            best_cost_trace: self.best_cost_trace.clone(),
        }
    }

    /// Deterministic shortcut pass on a recalled chain: replaces spans of
    /// consecutive segments with a single steered segment when that is
    /// feasible and cheaper, favoring long spans first.
    fn shortcut(&self, traj: PiecewiseTrajectory) -> PiecewiseTrajectory {
        let mut segs: Vec<QuinticSegment> = traj.segments().to_vec();
        for _pass in 0..3 {
            let mut improved = false;
            let mut i = 0;
            while i + 1 < segs.len() {
                let knots: Vec<BoundaryState> = {
                    let mut k = vec![segs[0].boundary_at(0.0)];
                    k.extend(segs.iter().map(|s| s.boundary_at(s.duration)));
                    k
                };
                let far = (i + 6).min(segs.len());
                let mut replaced = false;
                for j in (i + 1..=far).rev() {
                    let span_cost: f64 = segs[i..j].iter().map(|s| s.cost).sum();
                    let seg = self.steer(&knots[i], &knots[j]);
                    if seg.cost < span_cost
                        && self.edge_feasible(std::slice::from_ref(&seg))
                    {
                        segs.splice(i..j, std::iter::once(seg));
                        improved = true;
                        replaced = true;
                        break;
                    }
                }
                if !replaced {
                    i += 1;
                }
            }
            if !improved {
                break;
            }
        }
        PiecewiseTrajectory::new(segs)
    }

    /// Applies an updated environment: nodes whose incoming edges now
    /// collide are detached, their orphaned subtrees reconnected through
    /// the surviving tree where possible and dropped otherwise. Existing
    /// solution candidates are revalidated.
    pub fn update_environment(&mut self, new_grid: OccupancyGrid) {
        self.grid = new_grid;
        for toward_goal in [false, true] {
            self.prune_tree(toward_goal);
        }
        // Drop candidates whose nodes vanished or whose recalled path is
        // no longer feasible.
        let survivors: Vec<Candidate> = self
            .candidates
            .clone()
            .into_iter()
            .filter(|c| {
                let valid_nodes = match c {
                    Candidate::Pair {
                        start_node,
                        goal_node,
                    } => {
                        *start_node < self.start_tree.nodes.len()
                            && *goal_node < self.goal_tree.nodes.len()
                    }
                    Candidate::Splice { start_node, segs, .. } => {
                        *start_node < self.start_tree.nodes.len() && self.edge_feasible(segs)
                    }
                };
                valid_nodes && {
                    let traj = self.recall(c);
                    check_feasibility(&traj, &self.opt_env()).is_feasible()
                }
            })
            .collect();
        self.candidates = survivors;
        if self.candidates.is_empty() {
            self.first_solution_iter = None;
        }
    }

    /// Removes nodes with colliding incoming edges, reconnecting orphan
    /// subtree roots via a growth attempt where possible.
    fn prune_tree(&mut self, toward_goal: bool) {
        let tree = if toward_goal {
            self.goal_tree.clone()
        } else {
            self.start_tree.clone()
        };
        let n = tree.nodes.len();
        let mut edge_ok = vec![true; n];
        for (i, node) in tree.nodes.iter().enumerate() {
            if node.parent.is_some() {
                edge_ok[i] = self.edge_feasible(&node.edge);
            }
        }
        // Keep the connected component of the root under valid edges.
        let mut keep = vec![false; n];
        keep[0] = true;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            for &c in &tree.nodes[i].children {
                if edge_ok[c] {
                    keep[c] = true;
                    stack.push(c);
                }
            }
        }
        // Rebuild the kept part with remapped indices.
        let mut remap = vec![usize::MAX; n];
        let mut new_tree = Tree::new(tree.nodes[0].state, toward_goal);
        remap[0] = 0;
        let mut order: Vec<usize> = (1..n).filter(|&i| keep[i]).collect();
        order.sort_unstable();
        for i in order {
            let parent = tree.nodes[i].parent.unwrap();
            if remap[parent] == usize::MAX {
                continue;
            }
            remap[i] = new_tree.insert(
                tree.nodes[i].state,
                remap[parent],
                tree.nodes[i].edge.clone(),
            );
        }
        // Orphan subtree roots: valid own edge, dropped ancestor. Try to
        // reattach them (their descendants follow recursively).
        let mut orphan_roots: Vec<usize> = (1..n)
            .filter(|&i| !keep[i] && edge_ok[i] && keep[tree.nodes[i].parent.unwrap()] == false)
            .collect();
        orphan_roots.retain(|&i| {
            let p = tree.nodes[i].parent.unwrap();
            !keep[p]
        });
        orphan_roots.sort_unstable();

        if toward_goal {
            self.goal_tree = new_tree;
        } else {
            self.start_tree = new_tree;
        }
        for i in orphan_roots {
            let state = tree.nodes[i].state;
            if let Some(new_idx) = self.try_extend(toward_goal, &state) {
                // Reattach the orphan's direct children recursively.
                self.reattach_children(toward_goal, &tree, i, new_idx, &edge_ok);
            }
        }
        // Remap candidate node indices.
        let map_candidates = |cands: &mut Vec<Candidate>| {
            cands.retain_mut(|c| match c {
                Candidate::Pair {
                    start_node,
                    goal_node,
                } => {
                    let (idx, rm) = if toward_goal {
                        (goal_node, &remap)
                    } else {
                        (start_node, &remap)
                    };
                    if rm.get(*idx).copied().unwrap_or(usize::MAX) == usize::MAX {
                        false
                    } else {
                        *idx = rm[*idx];
                        true
                    }
                }
                Candidate::Splice { start_node, .. } => {
                    if toward_goal {
                        true
                    } else if remap.get(*start_node).copied().unwrap_or(usize::MAX) == usize::MAX {
                        false
                    } else {
                        *start_node = remap[*start_node];
                        true
                    }
                }
            });
        };
        map_candidates(&mut self.candidates);
    }

    fn reattach_children(
        &mut self,
        toward_goal: bool,
        old_tree: &Tree,
        old_idx: usize,
        new_idx: usize,
        edge_ok: &[bool],
    ) {
        for &child in &old_tree.nodes[old_idx].children {
            if !edge_ok[child] {
                continue;
            }
            let tree = if toward_goal {
                &mut self.goal_tree
            } else {
                &mut self.start_tree
            };
            let ni = tree.insert(
                old_tree.nodes[child].state,
                new_idx,
                old_tree.nodes[child].edge.clone(),
            );
            self.reattach_children(toward_goal, old_tree, child, ni, edge_ok);
        }
    }

    /// Restarts planning from a new start state (the goal tree and its
    /// samples survive; the start tree is rebuilt).
    pub fn replan_from(&mut self, start: &VesselState) -> Result<(), PlanFailure> {
        let rho = (self.params.v_max * self.params.v_max / self.params.a_max).max(1.0);
        let goal_heading = {
            let w = self.goal.v;
            if w.norm() > 1e-6 {
                w.y.atan2(w.x)
            } else {
                0.0
            }
        };
        self.topo = guidance::topo_path_find(
            &self.grid,
            &DubinsConfig::new(start.x, start.y, heading_of(start), rho),
            &DubinsConfig::new(self.goal.p.x, self.goal.p.y, goal_heading, rho),
            self.cfg.inflation_radius / 2.0,
        )
        .map_err(|_| PlanFailure::NoPath)?;
        self.start = lift_endpoint(start, self.params.a_max);
        self.start_tree = Tree::new(self.start, false);
        self.candidates.clear();
        self.first_solution_iter = None;
        self.iterations_run = 0;
        self.best_cost_trace.clear();
        Ok(())
    }

    pub fn node_counts(&self) -> (usize, usize) {
        (self.start_tree.nodes.len(), self.goal_tree.nodes.len())
    }

    #[cfg(test)]
    fn cost_consistency_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for tree in [&self.start_tree, &self.goal_tree] {
            for node in &tree.nodes {
                if let Some(p) = node.parent {
                    let want = tree.nodes[p].cost_to_root
                        + node.edge.iter().map(|s| s.cost).sum::<f64>();
                    worst = worst.max((want - node.cost_to_root).abs());
                }
            }
        }
        worst
    }
}

/// One-shot planning convenience wrapper.
pub fn plan(
    grid: &OccupancyGrid,
    params: &VesselParams,
    start: &VesselState,
    goal: &VesselState,
    cfg: &PlanConfig,
) -> PlanResult {
    match Planner::new(grid.clone(), params, start, goal, cfg.clone()) {
        Ok(mut p) => p.run(),
        Err(failure) => PlanResult {
            trajectory: None,
            metrics: PlanMetrics {
                traj_length: 0.0,
                traj_time: 0.0,
                traj_cost: 0.0,
                node_utilization: 0.0,
                algo_time_ms: 0.0,
                success: false,
                failure: Some(failure),
                iterations: 0,
                first_solution_iteration: None,
                samples: 0,
                nodes: 0,
                corridor_fallbacks: 0,
            },
            best_cost_trace: Vec::new(),
        },
    }
}
