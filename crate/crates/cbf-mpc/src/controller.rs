//! Receding-horizon controller with a learnable parameter vector.
//!
//! All tunable pieces of one control step live in [`ControllerTheta`]: the
//! quadratic cost weights, the class-K slopes of every safety row, the CLF
//! convergence rates, and the slack penalties. The vector flattens to a fixed
//! 16-entry layout so a policy network can emit it directly; [`theta_bounds`]
//! gives the per-entry box the learner maps into.
//!
//! [`MpcController`] assembles the horizon problem for the current scene
//! (optional same-lane leader, optional merging conflict, road edges, speed
//! range), solves it, applies the first control, and keeps a shifted copy of
//! the control sequence to warm-start the next step.

use crate::barrier::{BarrierSpec, ClfSpec, EllipseParams, MergingParams, RoadCircle};
use crate::dynamics::{step_rk4, ControlBounds, ControlInput, VehicleParams, VehicleState};
use crate::geometry::RouteLine;
use crate::nlp::{
    solve_nlp_sqp, BarrierConstraint, ClfConstraint, NlpProblem, NlpStatus, StageCost, SteerSlew,
};

/// Full controller parameterization. Every entry is positive; see
/// [`theta_bounds`] for the admissible box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerTheta {
    // Quadratic cost weights.
    pub w_speed: f64,
    pub w_lane: f64,
    pub w_accel: f64,
    pub w_steer: f64,
    // Class-K slopes of the safety rows.
    pub k_ellipse: f64,
    pub k_merging: f64,
    pub k_road_left: [f64; 2],
    pub k_road_right: [f64; 2],
    pub k_speed_max: f64,
    pub k_speed_min: f64,
    // CLF convergence rates.
    pub rate_speed: f64,
    pub rate_lane: f64,
    // Quadratic slack penalties on the CLF relaxations.
    pub slack_speed: f64,
    pub slack_lane: f64,
}

pub const THETA_DIM: usize = 16;

impl ControllerTheta {
    /// One uniform class-K slope on every safety row; cost, CLF, and slack
    /// entries shared by all presets.
    fn with_uniform_slope(slope: f64) -> Self {
        Self {
            w_speed: 0.5,
            w_lane: 0.5,
            w_accel: 0.5,
            w_steer: 0.5,
            k_ellipse: slope,
            k_merging: slope,
            k_road_left: [slope, slope],
            k_road_right: [slope, slope],
            k_speed_max: slope,
            k_speed_min: slope,
            rate_speed: 1.0,
            rate_lane: 1.0,
            slack_speed: 5.0,
            slack_lane: 5.0,
        }
    }

    /// Small slopes: the controller reacts early and keeps large margins.
    pub fn conservative() -> Self {
        Self::with_uniform_slope(0.5)
    }

    pub fn moderately_conservative() -> Self {
        Self::with_uniform_slope(1.0)
    }

    pub fn moderately_aggressive() -> Self {
        Self::with_uniform_slope(2.0)
    }

    /// Large slopes: constraints bind late and margins shrink.
    pub fn aggressive() -> Self {
        Self::with_uniform_slope(4.0)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "conservative" => Some(Self::conservative()),
            "moderately-conservative" => Some(Self::moderately_conservative()),
            "moderately-aggressive" => Some(Self::moderately_aggressive()),
            "aggressive" => Some(Self::aggressive()),
            _ => None,
        }
    }

    pub const PRESET_NAMES: [&'static str; 4] = [
        "conservative",
        "moderately-conservative",
        "moderately-aggressive",
        "aggressive",
    ];

    /// Fixed flattening order; [`theta_bounds`] and the policy head use the
    /// same indices.
    pub fn flatten(&self) -> [f64; THETA_DIM] {
        [
            self.w_speed,
            self.w_lane,
            self.w_accel,
            self.w_steer,
            self.k_ellipse,
            self.k_merging,
            self.k_road_left[0],
            self.k_road_left[1],
            self.k_road_right[0],
            self.k_road_right[1],
            self.k_speed_max,
            self.k_speed_min,
            self.rate_speed,
            self.rate_lane,
            self.slack_speed,
            self.slack_lane,
        ]
    }

    pub fn from_flat(v: &[f64]) -> Self {
        assert_eq!(v.len(), THETA_DIM, "theta vector must have {THETA_DIM} entries");
        assert!(v.iter().all(|x| *x > 0.0 && x.is_finite()), "theta entries must be positive");
        Self {
            w_speed: v[0],
            w_lane: v[1],
            w_accel: v[2],
            w_steer: v[3],
            k_ellipse: v[4],
            k_merging: v[5],
            k_road_left: [v[6], v[7]],
            k_road_right: [v[8], v[9]],
            k_speed_max: v[10],
            k_speed_min: v[11],
            rate_speed: v[12],
            rate_lane: v[13],
            slack_speed: v[14],
            slack_lane: v[15],
        }
    }
}

/// Admissible box per flattened entry: cost weights, class-K slopes, CLF
/// rates, slack penalties.
///
/// Class-K slopes are capped so that `slope * dt <= 1` at the default step
/// (0.2 s): beyond that the discretized degree-one rows stop being forward
/// invariant (e.g. the minimum-speed row would let a single step cross zero).
pub fn theta_bounds() -> ([f64; THETA_DIM], [f64; THETA_DIM]) {
    let mut lo = [0.0; THETA_DIM];
    let mut hi = [0.0; THETA_DIM];
    for i in 0..4 {
        lo[i] = 0.05;
        hi[i] = 5.0;
    }
    for i in 4..12 {
        lo[i] = 0.1;
        hi[i] = 5.0;
    }
    for i in 12..14 {
        lo[i] = 0.1;
        hi[i] = 5.0;
    }
    for i in 14..16 {
        lo[i] = 0.5;
        hi[i] = 50.0;
    }
    (lo, hi)
}

/// Static description of the lane a controller drives in: its route, the two
/// road-edge circles, and the speed range.
#[derive(Debug, Clone)]
pub struct LaneContext {
    pub route: RouteLine,
    pub other_route: RouteLine,
    pub road_left: RoadCircle,
    pub road_right: RoadCircle,
    pub v_min: f64,
    pub v_max: f64,
    pub v_des: f64,
}

/// How a neighbor vehicle is predicted over the horizon.
///
/// `Drift` propagates the current state at constant speed and heading — the
/// convention the two-vehicle Lie derivatives are written against. `Plan`
/// uses a published state trajectory (e.g. the neighbor's own MPC plan from
/// the same decision round), which removes the prediction error that drift
/// accumulates when the neighbor is itself braking or accelerating. A plan
/// shorter than the horizon is padded with its last state.
#[derive(Debug, Clone, Copy)]
pub enum NeighborModel<'a> {
    None,
    Drift(&'a VehicleState),
    Plan(&'a [VehicleState]),
}

impl<'a> NeighborModel<'a> {
    pub fn from_state(state: Option<&'a VehicleState>) -> Self {
        match state {
            Some(s) => NeighborModel::Drift(s),
            None => NeighborModel::None,
        }
    }
}

/// Outcome of one receding-horizon step.
#[derive(Debug, Clone)]
pub struct ControlStep {
    /// First control of the plan, clamped to the actuator bounds.
    pub control: ControlInput,
    /// True when every constraint held to tolerance at the solution.
    pub feasible: bool,
    /// l1 violation of the true constraints at the returned plan (0 when
    /// feasible).
    pub violation: f64,
    /// Planned states x_0..x_N.
    pub predicted: Vec<VehicleState>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct MpcController {
    pub theta: ControllerTheta,
    pub horizon: usize,
    pub dt: f64,
    pub vehicle: VehicleParams,
    pub bounds: ControlBounds,
    pub lane: LaneContext,
    pub ellipse: EllipseParams,
    /// Headway shape of the merging barrier (scale and standstill distance).
    pub varphi: f64,
    pub delta: f64,
    /// Constraint tightening on the vehicle-coupled rows (rear-end, merging),
    /// compensating the drift those rows accumulate between samples under a
    /// held control.
    pub row_margin: f64,
    /// Maximum steering rate (rad/s); 0 disables the slew rows.
    pub steer_slew_rate: f64,
    /// Steering angle applied on the previous executed step, anchoring the
    /// first slew row. Starts at 0 (wheels straight).
    prev_steer: f64,
    warm_controls: Option<Vec<ControlInput>>,
}

impl MpcController {
    pub fn new(
        theta: ControllerTheta,
        horizon: usize,
        dt: f64,
        vehicle: VehicleParams,
        bounds: ControlBounds,
        lane: LaneContext,
        ellipse: EllipseParams,
        varphi: f64,
        delta: f64,
    ) -> Self {
        assert!(horizon >= 1);
        assert!(dt > 0.0);
        Self {
            theta,
            horizon,
            dt,
            vehicle,
            bounds,
            lane,
            ellipse,
            varphi,
            delta,
            row_margin: 0.0,
            steer_slew_rate: 0.0,
            prev_steer: 0.0,
            warm_controls: None,
        }
    }

    /// Set the tightening on the vehicle-coupled barrier rows.
    pub fn with_row_margin(mut self, margin: f64) -> Self {
        assert!(margin >= 0.0);
        self.row_margin = margin;
        self
    }

    /// Set the steering slew limit (rad/s); 0 disables it.
    pub fn with_steer_slew_rate(mut self, rate: f64) -> Self {
        assert!(rate >= 0.0);
        self.steer_slew_rate = rate;
        self
    }

    /// Replace the parameter vector (e.g. with a fresh policy output) without
    /// discarding the warm start.
    pub fn set_theta(&mut self, theta: ControllerTheta) {
        self.theta = theta;
    }

    pub fn reset_warm_start(&mut self) {
        self.warm_controls = None;
        self.prev_steer = 0.0;
    }

    /// Propagate a neighbor over the horizon as uncontrolled drift (constant
    /// speed and heading), matching the Lie-derivative convention of the
    /// two-vehicle barriers.
    fn predict_neighbor(&self, state: &VehicleState) -> Vec<VehicleState> {
        let mut traj = Vec::with_capacity(self.horizon + 1);
        let mut s = *state;
        traj.push(s);
        for _ in 0..self.horizon {
            s = step_rk4(&s, &ControlInput::ZERO, &self.vehicle, self.dt);
            traj.push(s);
        }
        traj
    }

    /// Expand a neighbor model into one state per stage (x_0..x_N), or `None`
    /// when the neighbor is absent.
    fn neighbor_traj(&self, model: NeighborModel<'_>) -> Option<Vec<VehicleState>> {
        match model {
            NeighborModel::None => None,
            NeighborModel::Drift(s) => Some(self.predict_neighbor(s)),
            NeighborModel::Plan(plan) => {
                assert!(!plan.is_empty(), "neighbor plan must hold at least one state");
                let last = *plan.last().unwrap();
                Some((0..=self.horizon).map(|k| *plan.get(k).unwrap_or(&last)).collect())
            }
        }
    }

    /// Build the horizon problem for the current scene. Barrier order is
    /// fixed: rear-end ellipse (if a leader exists), merging (if a conflict
    /// exists), road left, road right, speed cap, speed floor.
    pub fn assemble_problem(
        &self,
        ego: &VehicleState,
        leader: Option<&VehicleState>,
        conflict: Option<&VehicleState>,
    ) -> NlpProblem {
        self.assemble_problem_with(
            ego,
            NeighborModel::from_state(leader),
            NeighborModel::from_state(conflict),
        )
    }

    /// As [`assemble_problem`](Self::assemble_problem), but with an explicit
    /// prediction model per neighbor.
    pub fn assemble_problem_with(
        &self,
        ego: &VehicleState,
        leader: NeighborModel<'_>,
        conflict: NeighborModel<'_>,
    ) -> NlpProblem {
        let th = &self.theta;
        let mut barriers = Vec::new();
        if let Some(traj) = self.neighbor_traj(leader) {
            barriers.push(BarrierConstraint {
                spec: BarrierSpec::RearEndEllipse(self.ellipse),
                class_k: vec![th.k_ellipse],
                neighbor: Some(traj),
                margin: self.row_margin,
            });
        }
        if let Some(traj) = self.neighbor_traj(conflict) {
            barriers.push(BarrierConstraint {
                spec: BarrierSpec::SafeMerging(MergingParams {
                    ego_route: self.lane.route,
                    other_route: self.lane.other_route,
                    varphi: self.varphi,
                    delta: self.delta,
                }),
                class_k: vec![th.k_merging],
                neighbor: Some(traj),
                margin: self.row_margin,
            });
        }
        barriers.push(BarrierConstraint {
            spec: BarrierSpec::RoadLeft(self.lane.road_left),
            class_k: th.k_road_left.to_vec(),
            neighbor: None,
            margin: 0.0,
        });
        barriers.push(BarrierConstraint {
            spec: BarrierSpec::RoadRight(self.lane.road_right),
            class_k: th.k_road_right.to_vec(),
            neighbor: None,
            margin: 0.0,
        });
        barriers.push(BarrierConstraint {
            spec: BarrierSpec::SpeedMax { v_max: self.lane.v_max },
            class_k: vec![th.k_speed_max],
            neighbor: None,
            margin: 0.0,
        });
        barriers.push(BarrierConstraint {
            spec: BarrierSpec::SpeedMin { v_min: self.lane.v_min },
            class_k: vec![th.k_speed_min],
            neighbor: None,
            margin: 0.0,
        });

        NlpProblem {
            initial_state: *ego,
            horizon: self.horizon,
            dt: self.dt,
            vehicle: self.vehicle,
            bounds: self.bounds,
            cost: StageCost {
                w_speed: th.w_speed,
                w_lane: th.w_lane,
                w_accel: th.w_accel,
                w_steer: th.w_steer,
                v_des: self.lane.v_des,
                route: self.lane.route,
            },
            barriers,
            clfs: vec![
                ClfConstraint {
                    spec: ClfSpec::SpeedTracking { v_des: self.lane.v_des },
                    rate: th.rate_speed,
                    slack_weight: th.slack_speed,
                },
                ClfConstraint {
                    spec: ClfSpec::LaneKeeping { route: self.lane.route },
                    rate: th.rate_lane,
                    slack_weight: th.slack_lane,
                },
            ],
            slew: (self.steer_slew_rate > 0.0)
                .then(|| SteerSlew { rate: self.steer_slew_rate, prev: self.prev_steer }),
        }
    }

    /// One receding-horizon step: solve the horizon problem (warm-started
    /// from the previous plan shifted by a stage) and return the first
    /// control. An infeasible step returns the least-violating control and
    /// flags itself; the violation is the l1 measure on the true rows.
    pub fn compute_control(
        &mut self,
        ego: &VehicleState,
        leader: Option<&VehicleState>,
        conflict: Option<&VehicleState>,
    ) -> ControlStep {
        self.compute_control_with(
            ego,
            NeighborModel::from_state(leader),
            NeighborModel::from_state(conflict),
        )
    }

    /// As [`compute_control`](Self::compute_control), but with an explicit
    /// prediction model per neighbor (drift extrapolation or a shared plan).
    pub fn compute_control_with(
        &mut self,
        ego: &VehicleState,
        leader: NeighborModel<'_>,
        conflict: NeighborModel<'_>,
    ) -> ControlStep {
        let problem = self.assemble_problem_with(ego, leader, conflict);
        let warm = self.warm_controls.as_ref().map(|c| problem.guess_from_controls(c));
        let sol = solve_nlp_sqp(&problem, warm.as_ref());

        let controls = problem.controls_of(&sol.z);
        // Shift the plan one stage for the next step's warm start, repeating
        // the final control.
        let mut shifted: Vec<ControlInput> = controls.iter().skip(1).copied().collect();
        if let Some(last) = controls.last() {
            shifted.push(*last);
        }
        self.warm_controls = Some(shifted);

        let control = self.bounds.clamp(controls[0]);
        self.prev_steer = control.steer;
        let feasible = matches!(sol.status, NlpStatus::Feasible | NlpStatus::MaxIterations);
        let violation = match sol.status {
            NlpStatus::Infeasible { violation } => violation,
            _ => 0.0,
        };
        ControlStep {
            control,
            feasible,
            violation,
            predicted: problem.states_of(&sol.z),
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
        }
    }
}

/// Convenience wrapper for tests and examples: a straight 4 m lane on the x
/// axis with generous road-edge circles.
pub fn straight_lane(v_des: f64) -> LaneContext {
    let route = RouteLine::new([-100.0, 0.0], 0.0, 100.0);
    let other = RouteLine::new([-100.0, -50.0], 0.0, 100.0);
    let r = 1.0e4;
    LaneContext {
        route,
        other_route: other,
        road_left: RoadCircle { center: [-50.0, 2.0 + r], radius: r },
        road_right: RoadCircle { center: [-50.0, r - 2.0], radius: r },
        v_min: 0.0,
        v_max: 20.0,
        v_des,
    }
}
