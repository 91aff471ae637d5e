//! Runs the simulation and prints its score table. Arguments: replicate
//! count, then an optional JSON config file.

use std::time::Instant;

use sitebal_core::sim::{run_simulation, SimConfig};

fn main() {
    let reps = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(120);
    let mut config = SimConfig {
        reps,
        ..SimConfig::default()
    };
    if let Some(path) = std::env::args().nth(2) {
        let text = std::fs::read_to_string(path).expect("config file");
        config = serde_json::from_str(&text).expect("config json");
        config.reps = reps;
    }
    let start = Instant::now();
    let report = run_simulation(&config).expect("simulation");
    println!(
        "{:<14} {:>10} {:>10} {:>14} {:>9} {:>8}",
        "method", "lambda", "rmse", "mean_abs_bias", "ess", "failed"
    );
    for r in &report.rows {
        let lambda = r.lambda.map_or("-".to_string(), |l| format!("{l:.1e}"));
        let ess = r.mean_ess.map_or("-".to_string(), |e| format!("{e:.1}"));
        println!(
            "{:<14} {:>10} {:>10.5} {:>14.5} {:>9} {:>8}",
            r.method.as_str(),
            lambda,
            r.rmse,
            r.mean_abs_bias,
            ess,
            r.failures
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
}
