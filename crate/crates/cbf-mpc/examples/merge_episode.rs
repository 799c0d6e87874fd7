//! Run one short on-ramp merging episode with a fixed parameter preset and
//! print the per-episode metrics plus the post-hoc barrier audit.

use cbf_mpc::config::AppConfig;
use cbf_mpc::controller::ControllerTheta;
use cbf_mpc::sim::{run_episode, FixedTheta};

fn main() {
    let mut cfg = AppConfig::default();
    cfg.scenario.cav_target = 8;

    let mut policy = FixedTheta(ControllerTheta::moderately_conservative());
    let out = run_episode(&cfg, 7, &mut policy);

    let m = &out.metrics;
    println!("episode over after {:.1} simulated seconds", m.duration);
    println!("  completed: {}   still in the zone: {}", m.completed, m.incomplete);
    println!("  mean travel time: {:.3} s", m.mean_travel_time);
    println!("  mean effort:      {:.3} (m/s^2)^2 s", m.mean_effort);
    println!("  mean fuel:        {:.3} ml", m.mean_fuel);
    println!("  infeasible steps: {} of {}", m.infeasible_steps, m.total_steps);
    println!("  worst audited barrier value: {:+.4e}", out.audit_min_barrier);

    println!("\nper-vehicle records (effort time-averaged, fuel total):");
    println!("  {:>3} {:>5} {:>9} {:>9} {:>9}", "id", "road", "travel", "effort", "fuel");
    for r in &out.records {
        if let Some(t) = r.travel_time() {
            println!(
                "  {:>3} {:>5} {:>9.3} {:>9.3} {:>9.3}",
                r.id,
                format!("{:?}", r.road),
                t,
                r.effort_integral / t,
                r.fuel_integral
            );
        }
    }
}
