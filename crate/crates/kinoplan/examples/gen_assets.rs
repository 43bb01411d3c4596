//! Regenerates the shipped demo assets: a synthetic motion log with rich
//! excitation and its ground-truth parameters.
//!
//! ```sh
//! cargo run -p kinoplan --example gen_assets -- assets/
//! ```

use kinoplan::sysid::synthetic_log;
use kinoplan::vessel::{VesselParams, VesselState};
use std::path::PathBuf;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("assets"));
    std::fs::create_dir_all(&dir).expect("create asset dir");

    let params = VesselParams::default();
    let log = synthetic_log(
        &params,
        30.0,
        0.01,
        VesselState::new(0.0, 0.0, 0.1, 0.5, 0.0, 0.0),
    );
    let file = std::fs::File::create(dir.join("demo_log.csv")).expect("create log");
    log.write_csv(file).expect("write log");

    let truth = serde_json::json!({
        "m1": params.m1,
        "m2": params.m2,
        "d1": params.d1,
        "d2": params.d2,
        "d3": params.d3,
    });
    std::fs::write(
        dir.join("demo_log_truth.json"),
        serde_json::to_string_pretty(&truth).unwrap() + "\n",
    )
    .expect("write truth");

    params
        .to_file(dir.join("vessel_default.toml"))
        .expect("write params");
    println!("assets written to {}", dir.display());
}
