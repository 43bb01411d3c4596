//! Prints extension-outcome statistics and per-ablation timing breakdowns
//! of planning runs on the benchmark maps.

use kinoplan::harness::{random_map, Ablation};
use kinoplan::planner::{PlanConfig, Planner};
use kinoplan::vessel::{VesselParams, VesselState};
use nalgebra::Vector2;

fn main() {
    let params = VesselParams::default();
    let start = VesselState::at_pose(5.0, 30.0, 0.0);
    let goal = VesselState::at_pose(55.0, 30.0, 0.0);
    for ab in Ablation::ALL {
        let mut totals = [0usize; 4];
        let mut fail_runs = 0;
        let mut first_sum = 0usize;
        let mut iter_sum = 0usize;
        let mut time_sum = 0.0;
        let mut prof = [0.0f64; 4];
        let mut n = 0usize;
        for map_seed in 0..10u64 {
            let grid = random_map(
                60.0,
                60.0,
                0.2,
                0.15,
                map_seed,
                &[start.position(), goal.position()],
            )
            .inflate(0.8);
            for trial in 0..5u64 {
                let mut cfg = PlanConfig {
                    rng_seed: 1000 + trial,
                    ..PlanConfig::default()
                };
                ab.apply(&mut cfg);
                let mut planner = Planner::new(grid.clone(), &params, &start, &goal, cfg).unwrap();
                let result = planner.run();
                let s = planner.extension_stats();
                for i in 0..4 {
                    totals[i] += s[i];
                }
                for i in 0..4 {
                    prof[i] += planner.prof[i];
                }
                n += 1;
                time_sum += result.metrics.algo_time_ms;
                iter_sum += result.metrics.iterations;
                first_sum += result.metrics.first_solution_iteration.unwrap_or(0);
                if !result.metrics.success {
                    fail_runs += 1;
                }
            }
        }
        let total: usize = totals.iter().sum();
        println!(
            "{:>9}: direct {:4.1}%, retimed {:4.1}%, qp {:4.1}%, failed {:4.1}% | first {:5.1}, iters {:5.1}, time {:6.1} ms, failed runs {}",
            ab.label(),
            100.0 * totals[0] as f64 / total.max(1) as f64,
            100.0 * totals[1] as f64 / total.max(1) as f64,
            100.0 * totals[2] as f64 / total.max(1) as f64,
            100.0 * totals[3] as f64 / total.max(1) as f64,
            first_sum as f64 / n as f64,
            iter_sum as f64 / n as f64,
            time_sum as f64 / n as f64,
            fail_runs
        );
        println!(
            "           profile per run: steer {:.1} ms, feas {:.1} ms, repair {:.1} ms",
            1e3 * prof[0] / n as f64,
            1e3 * prof[1] / n as f64,
            1e3 * prof[2] / n as f64
        );
    }
}
