//! One receding-horizon solve: ego approaching a slower leader on a straight
//! lane. Prints the applied control, the planned speeds, and solver
//! diagnostics, then repeats the solve warm-started one step later.

use cbf_mpc::barrier::EllipseParams;
use cbf_mpc::controller::{straight_lane, ControllerTheta, MpcController, NeighborModel};
use cbf_mpc::dynamics::{step_rk4, ControlBounds, ControlInput, VehicleParams, VehicleState};

fn main() {
    let params = VehicleParams::default();
    let mut ctrl = MpcController::new(
        ControllerTheta::moderately_conservative(),
        5,
        0.2,
        params,
        ControlBounds::default(),
        straight_lane(15.0),
        EllipseParams::default(),
        1.2,
        3.74,
    )
    .with_steer_slew_rate(0.6);

    let mut ego = VehicleState::new(-60.0, 0.3, 0.0, 14.0);
    let mut leader = VehicleState::new(-32.0, 0.0, 0.0, 9.0);
    let leader_hold = ControlInput::new(0.0, 0.0);

    for step in 0..3 {
        let out = ctrl.compute_control_with(
            &ego,
            NeighborModel::Drift(&leader),
            NeighborModel::None,
        );
        println!("step {step}: gap {:.2} m, ego {:.2} m/s", leader.x - ego.x, ego.v);
        println!(
            "  u = (accel {:+.4}, steer {:+.4})  feasible {}  {} SQP iterations, KKT {:.2e}",
            out.control.accel, out.control.steer, out.feasible, out.iterations, out.kkt_residual
        );
        let speeds: Vec<String> = out.predicted.iter().map(|s| format!("{:.2}", s.v)).collect();
        println!("  planned speeds: [{}]", speeds.join(", "));
        ego = step_rk4(&ego, &out.control, &params, ctrl.dt);
        leader = step_rk4(&leader, &leader_hold, &params, ctrl.dt);
    }
}
