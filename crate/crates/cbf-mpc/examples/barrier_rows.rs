//! Build every barrier family for one concrete two-vehicle scene and print
//! its value, Lie derivatives, and the affine-in-control constraint row.
//!
//! Each row reads `grad_u . u + constant >= 0`; a control keeps the barrier
//! nonnegative (to first order over one step) exactly when the row holds.

use cbf_mpc::barrier::{
    build_hocbf_row, eval_barrier, lie_derivatives, relative_degree, BarrierSpec, EllipseParams,
    MergingParams, RoadCircle,
};
use cbf_mpc::dynamics::{ControlInput, VehicleParams, VehicleState};
use cbf_mpc::geometry::RouteLine;

fn main() {
    let params = VehicleParams::default();

    // Ego on the main road, 22 m behind a slower leader; a ramp vehicle
    // farther along a 12 degree ramp reaches the same merge point first.
    let ego = VehicleState::new(-40.0, 0.0, 0.0, 10.0);
    let leader = VehicleState::new(-18.0, 0.0, 0.0, 8.0);
    let main_route = RouteLine::new([-100.0, 0.0], 0.0, 100.0);
    let ramp_route = RouteLine::new([-97.8, -20.8], 0.21, 100.0);
    let ramp_vehicle = VehicleState::new(-24.4, -5.2, 0.21, 12.0);

    let r = 1.0e4;
    let specs: Vec<(BarrierSpec, Option<&VehicleState>, Vec<f64>)> = vec![
        (BarrierSpec::RearEndEllipse(EllipseParams::default()), Some(&leader), vec![1.0]),
        (
            BarrierSpec::SafeMerging(MergingParams {
                ego_route: main_route,
                other_route: ramp_route,
                varphi: 1.2,
                delta: 3.74,
            }),
            Some(&ramp_vehicle),
            vec![1.0],
        ),
        (
            BarrierSpec::RoadLeft(RoadCircle { center: [-50.0, 2.0 + r], radius: r }),
            None,
            vec![1.0, 1.0],
        ),
        (
            BarrierSpec::RoadRight(RoadCircle { center: [-50.0, r - 2.0], radius: r }),
            None,
            vec![1.0, 1.0],
        ),
        (BarrierSpec::SpeedMax { v_max: 20.0 }, None, vec![1.0]),
        (BarrierSpec::SpeedMin { v_min: 0.0 }, None, vec![1.0]),
    ];

    let coast = ControlInput::new(0.0, 0.0);
    let brake = ControlInput::new(-2.0, 0.0);
    for (spec, other, slopes) in &specs {
        let b = eval_barrier(spec, &ego, *other).unwrap();
        let lie = lie_derivatives(spec, &ego, *other, &params).unwrap();
        let row = build_hocbf_row(spec, &ego, *other, slopes, &params).unwrap();
        println!("{:?} (degree {})", spec.kind(), relative_degree(spec.kind()));
        println!("  b = {b:+.4}   L_f b = {:+.4}   L_g b = [{:+.4}, {:+.4}]", lie.lf_b, lie.lg_b[0], lie.lg_b[1]);
        println!(
            "  row: [{:+.4}, {:+.4}] . u {:+.4} >= 0",
            row.grad_u[0], row.grad_u[1], row.constant
        );
        let at = |u: &ControlInput| row.grad_u[0] * u.accel + row.grad_u[1] * u.steer + row.constant;
        println!("  at coast: {:+.4}   at full brake: {:+.4}\n", at(&coast), at(&brake));
    }
}
