//! Integrate the kinematic bicycle model with RK4 and print the trajectory.
//!
//! Two rollouts: a straight line under constant acceleration (compare the
//! final state against the closed form) and a constant-steer arc.

use cbf_mpc::dynamics::{rollout, ControlInput, VehicleParams, VehicleState};

fn main() {
    let params = VehicleParams::default();
    let dt = 0.2;

    // Straight line: accel 1 m/s^2, no steering, 10 steps from 10 m/s.
    let start = VehicleState::new(0.0, 0.0, 0.0, 10.0);
    let inputs = vec![ControlInput::new(1.0, 0.0); 10];
    let states = rollout(&start, &inputs, &params, dt);
    let t = dt * inputs.len() as f64;
    let exact_x = start.v * t + 0.5 * 1.0 * t * t;
    let exact_v = start.v + 1.0 * t;
    let last = states.last().unwrap();
    println!("straight line, {} steps of {dt} s:", inputs.len());
    println!("  integrated: x = {:.6} m, v = {:.6} m/s", last.x, last.v);
    println!("  closed form: x = {exact_x:.6} m, v = {exact_v:.6} m/s");
    println!("  error: {:.3e} m", (last.x - exact_x).abs());

    // Constant-steer arc at constant speed.
    let inputs = vec![ControlInput::new(0.0, 0.2); 25];
    let states = rollout(&start, &inputs, &params, dt);
    println!("\nconstant steer 0.2 rad at 10 m/s:");
    println!("  {:>6} {:>9} {:>9} {:>8} {:>7}", "t [s]", "x [m]", "y [m]", "psi", "v");
    for (k, s) in states.iter().enumerate().step_by(5) {
        println!(
            "  {:>6.1} {:>9.3} {:>9.3} {:>8.4} {:>7.3}",
            k as f64 * dt,
            s.x,
            s.y,
            s.psi,
            s.v
        );
    }
}
