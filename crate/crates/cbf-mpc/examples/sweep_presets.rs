//! Evaluate every fixed parameter preset on the same seeded episodes and
//! print a comparison table. Larger class-K slopes let vehicles ride closer
//! to the constraint boundary: travel time falls as the presets get more
//! aggressive.

use cbf_mpc::config::AppConfig;
use cbf_mpc::controller::ControllerTheta;
use cbf_mpc::sim::{run_episode, FixedTheta};

fn main() {
    let mut cfg = AppConfig::default();
    cfg.scenario.cav_target = 8;
    let seeds = [3u64, 4, 5];

    println!(
        "{:<24} {:>10} {:>10} {:>10} {:>12} {:>12}",
        "preset", "travel [s]", "effort", "fuel [ml]", "infeasible", "worst audit"
    );
    for name in ControllerTheta::PRESET_NAMES {
        let theta = ControllerTheta::preset(name).unwrap();
        let mut travel = 0.0;
        let mut effort = 0.0;
        let mut fuel = 0.0;
        let mut infeasible = 0u64;
        let mut worst = f64::INFINITY;
        for &seed in &seeds {
            let mut policy = FixedTheta(theta);
            let out = run_episode(&cfg, seed, &mut policy);
            travel += out.metrics.mean_travel_time;
            effort += out.metrics.mean_effort;
            fuel += out.metrics.mean_fuel;
            infeasible += out.metrics.infeasible_steps;
            worst = worst.min(out.audit_min_barrier);
        }
        let n = seeds.len() as f64;
        println!(
            "{:<24} {:>10.3} {:>10.3} {:>10.3} {:>12.1} {:>12.3e}",
            name,
            travel / n,
            effort / n,
            fuel / n,
            infeasible as f64 / n,
            worst
        );
    }
}
