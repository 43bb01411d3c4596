//! Micro-benchmarks for the hot paths: closed-form steering, grid A*,
//! one NMPC tick, and a full planning query.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kinoplan::harness::random_map;
use kinoplan::obvp::{optimal_time, solve_fixed_time, BoundaryState};
use kinoplan::planner::{plan, PlanConfig};
use kinoplan::tracker::{solve, NmpcConfig, ReferenceWindow};
use kinoplan::vessel::{ControlInput, VesselParams, VesselState};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_boundary(rng: &mut ChaCha8Rng) -> BoundaryState {
    BoundaryState::new(
        Vector2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)),
        Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
    )
}

fn bench_obvp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("obvp_fixed_time", |b| {
        b.iter_batched(
            || (random_boundary(&mut rng), random_boundary(&mut rng)),
            |(s0, s1)| solve_fixed_time(&s0, &s1, 4.0, 1.0).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let mut rng2 = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("obvp_optimal_time", |b| {
        b.iter_batched(
            || (random_boundary(&mut rng2), random_boundary(&mut rng2)),
            |(s0, s1)| optimal_time(&s0, &s1, 1.0, (0.5, 30.0)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_astar(c: &mut Criterion) {
    let grid = random_map(60.0, 60.0, 0.2, 0.15, 7, &[Vector2::new(5.0, 5.0), Vector2::new(55.0, 55.0)])
        .inflate(0.8);
    c.bench_function("astar_60m_map", |b| {
        b.iter(|| {
            grid.astar(Vector2::new(5.0, 5.0), Vector2::new(55.0, 55.0))
                .unwrap()
        })
    });
}

fn bench_nmpc(c: &mut Criterion) {
    let params = VesselParams::default();
    let cfg = NmpcConfig::default().with_bounds(&params);
    let reference = VesselState::new(1.0, 0.5, 0.1, 1.5, 0.0, 0.0);
    let rw = ReferenceWindow {
        states: vec![reference; cfg.horizon + 1],
        inputs: vec![ControlInput::new(30.0, 0.0); cfg.horizon],
    };
    let x0 = VesselState::at_pose(0.0, 0.0, 0.0);
    c.bench_function("nmpc_tick_cold", |b| {
        b.iter(|| solve(&x0, &rw, &cfg, &params, None))
    });
    let warm = solve(&x0, &rw, &cfg, &params, None);
    c.bench_function("nmpc_tick_warm", |b| {
        b.iter(|| solve(&x0, &rw, &cfg, &params, Some(&warm)))
    });
}

fn bench_plan(c: &mut Criterion) {
    let params = VesselParams::default();
    let grid = random_map(60.0, 60.0, 0.2, 0.15, 3, &[Vector2::new(5.0, 30.0), Vector2::new(55.0, 30.0)])
        .inflate(0.8);
    let start = VesselState::at_pose(5.0, 30.0, 0.0);
    let goal = VesselState::at_pose(55.0, 30.0, 0.0);
    let mut group = c.benchmark_group("planner");
    group.sample_size(20);
    group.bench_function("plan_60m_random_map", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            let cfg = PlanConfig {
                rng_seed: seed,
                ..PlanConfig::default()
            };
            plan(&grid, &params, &start, &goal, &cfg)
        })
    });
    group.finish();
}

criterion_group!(benches, bench_obvp, bench_astar, bench_nmpc, bench_plan);
criterion_main!(benches);
