//! Control barrier and control Lyapunov function machinery.
//!
//! A barrier b(x) >= 0 delimits a safe set. For a barrier of relative degree m
//! (the control first appears in the m-th time derivative along the vehicle
//! dynamics), the high-order CBF condition with linear class-K functions
//! alpha_i(s) = theta_i * s chains
//!
//! ```text
//!   zeta_0 = b,   zeta_i = d(zeta_{i-1})/dt + theta_i * zeta_{i-1}
//! ```
//!
//! and enforces zeta_m >= 0, an affine-in-control row at the current state.
//! Satisfying the row at every sampling instant keeps the intersection of the
//! zeta sublevel sets forward invariant, so trajectories that start safe stay
//! safe (up to discretization slack, which the simulator audits).
//!
//! Six barrier families are implemented:
//!
//! * rear-end ellipse between a vehicle and its lane predecessor (degree 1),
//! * safe-merging spacing against the vehicle merging immediately ahead on
//!   the other road (degree 1),
//! * left/right road-boundary circles (degree 2: position constraints see the
//!   control only through two derivatives),
//! * speed ceiling / floor (degree 1).
//!
//! For the degree-1 vehicle-pair barriers the acceleration enters through the
//! speed dependence while the steering coefficient is exactly zero; they are
//! treated uniformly as degree 1 rather than splitting per input channel.
//!
//! Barriers that couple two vehicles differentiate the pair as a joint system:
//! the neighbor contributes its constant-speed drift (zero control) to L_f b,
//! and L_g b is the ego control coefficient alone. Lyapunov rows relax with a
//! slack: L_f V + L_g V * u + theta * V <= e, with e penalized quadratically
//! in the controller objective.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{VehicleParams, VehicleState};
use crate::geometry::RouteLine;

/// Errors from barrier evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum BarrierError {
    /// The rear-end ellipse divides by the ego speed; a non-positive or
    /// non-finite speed has no meaningful ellipse. Speeds in (0, v_floor) are
    /// evaluated at v_floor instead of erroring.
    #[error("degenerate state for {kind:?}: {reason}")]
    DegenerateState { kind: BarrierKind, reason: String },
    /// A two-vehicle barrier was evaluated without its counterpart.
    #[error("{kind:?} requires a neighbor state")]
    MissingNeighbor { kind: BarrierKind },
}

/// Which barrier family a spec instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BarrierKind {
    RearEndEllipse,
    SafeMerging,
    RoadLeft,
    RoadRight,
    SpeedMax,
    SpeedMin,
}

/// Speed-scaled safety ellipse: semi-axes grow with ego speed so the standoff
/// is a time headway, not a fixed distance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EllipseParams {
    /// Longitudinal semi-axis per unit speed (seconds).
    pub a_scale: f64,
    /// Lateral semi-axis per unit speed (seconds).
    pub b_scale: f64,
    /// Below this speed the axes are evaluated at v_floor to keep the
    /// division bounded.
    pub v_floor: f64,
}

impl Default for EllipseParams {
    fn default() -> Self {
        Self { a_scale: 1.8, b_scale: 0.6, v_floor: 0.1 }
    }
}

/// Geometry for the safe-merging barrier: both routes end at the merging
/// point after `ego_route.length` (resp. `other_route.length`) meters, and the
/// reaction-time headway ramps linearly from zero at control-zone entry to
/// `varphi` at the merging point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MergingParams {
    pub ego_route: RouteLine,
    pub other_route: RouteLine,
    /// Full reaction-time headway at the merging point (seconds).
    pub varphi: f64,
    /// Fixed spacing margin (meters).
    pub delta: f64,
}

impl MergingParams {
    /// Progress map: zero at control-zone entry, `varphi` at the merging
    /// point, linear in arc length.
    pub fn phi(&self, ego_progress: f64) -> f64 {
        self.varphi * ego_progress / self.ego_route.length
    }
}

/// A circular road boundary. `RoadLeft` keeps the vehicle outside the circle,
/// `RoadRight` keeps it inside; straight lanes use a large radius.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoadCircle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// A barrier instance: the family plus its geometry payload.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum BarrierSpec {
    RearEndEllipse(EllipseParams),
    SafeMerging(MergingParams),
    RoadLeft(RoadCircle),
    RoadRight(RoadCircle),
    SpeedMax { v_max: f64 },
    SpeedMin { v_min: f64 },
}

impl BarrierSpec {
    pub fn kind(&self) -> BarrierKind {
        match self {
            BarrierSpec::RearEndEllipse(_) => BarrierKind::RearEndEllipse,
            BarrierSpec::SafeMerging(_) => BarrierKind::SafeMerging,
            BarrierSpec::RoadLeft(_) => BarrierKind::RoadLeft,
            BarrierSpec::RoadRight(_) => BarrierKind::RoadRight,
            BarrierSpec::SpeedMax { .. } => BarrierKind::SpeedMax,
            BarrierSpec::SpeedMin { .. } => BarrierKind::SpeedMin,
        }
    }

    pub fn needs_neighbor(&self) -> bool {
        matches!(self, BarrierSpec::RearEndEllipse(_) | BarrierSpec::SafeMerging(_))
    }
}

/// Relative degree of each family along the bicycle dynamics: how many time
/// derivatives of b until the control appears.
pub fn relative_degree(kind: BarrierKind) -> usize {
    match kind {
        BarrierKind::RoadLeft | BarrierKind::RoadRight => 2,
        _ => 1,
    }
}

fn ellipse_speed(params: &EllipseParams, ego: &VehicleState) -> Result<f64, BarrierError> {
    if !ego.v.is_finite() || ego.v <= 0.0 {
        return Err(BarrierError::DegenerateState {
            kind: BarrierKind::RearEndEllipse,
            reason: format!("ego speed {} must be positive and finite", ego.v),
        });
    }
    Ok(ego.v.max(params.v_floor))
}

fn require_neighbor<'a>(
    kind: BarrierKind,
    other: Option<&'a VehicleState>,
) -> Result<&'a VehicleState, BarrierError> {
    other.ok_or(BarrierError::MissingNeighbor { kind })
}

/// Barrier value b at the given state(s). Positive means safe.
pub fn eval_barrier(
    spec: &BarrierSpec,
    ego: &VehicleState,
    other: Option<&VehicleState>,
) -> Result<f64, BarrierError> {
    match spec {
        BarrierSpec::RearEndEllipse(p) => {
            let o = require_neighbor(BarrierKind::RearEndEllipse, other)?;
            let ve = ellipse_speed(p, ego)?;
            let dx = ego.x - o.x;
            let dy = ego.y - o.y;
            let ax = p.a_scale * ve;
            let ay = p.b_scale * ve;
            Ok(dx * dx / (ax * ax) + dy * dy / (ay * ay) - 1.0)
        }
        BarrierSpec::SafeMerging(p) => {
            let o = require_neighbor(BarrierKind::SafeMerging, other)?;
            let s_ego = p.ego_route.progress(ego.x, ego.y);
            let s_other = p.other_route.progress(o.x, o.y);
            Ok(s_other - s_ego - p.phi(s_ego) * ego.v - p.delta)
        }
        BarrierSpec::RoadLeft(c) => {
            let ex = ego.x - c.center[0];
            let ey = ego.y - c.center[1];
            Ok(ex * ex + ey * ey - c.radius * c.radius)
        }
        BarrierSpec::RoadRight(c) => {
            let ex = ego.x - c.center[0];
            let ey = ego.y - c.center[1];
            Ok(c.radius * c.radius - ex * ex - ey * ey)
        }
        BarrierSpec::SpeedMax { v_max } => Ok(v_max - ego.v),
        BarrierSpec::SpeedMin { v_min } => Ok(ego.v - v_min),
    }
}

/// Lie derivatives of a barrier along the (joint) dynamics.
///
/// `lf_b` is the drift part of db/dt (including the neighbor's constant-speed
/// motion for two-vehicle barriers); `lg_b` are the ego-control coefficients,
/// so db/dt = lf_b + lg_b . u. For degree-2 barriers `lg_b` is exactly zero
/// and `second` carries d2b/dt2 = lf2_b + lglf_b . u.
#[derive(Debug, Clone, Copy)]
pub struct LieDerivatives {
    pub b: f64,
    pub lf_b: f64,
    pub lg_b: Vector2<f64>,
    pub second: Option<SecondOrderLie>,
}

#[derive(Debug, Clone, Copy)]
pub struct SecondOrderLie {
    pub lf2_b: f64,
    pub lglf_b: Vector2<f64>,
}

/// Analytic first (and, for degree-2 barriers, second) Lie derivatives.
pub fn lie_derivatives(
    spec: &BarrierSpec,
    ego: &VehicleState,
    other: Option<&VehicleState>,
    params: &VehicleParams,
) -> Result<LieDerivatives, BarrierError> {
    let b = eval_barrier(spec, ego, other)?;
    let (sp, cp) = ego.psi.sin_cos();
    match spec {
        BarrierSpec::RearEndEllipse(p) => {
            let o = require_neighbor(BarrierKind::RearEndEllipse, other)?;
            let ve = ellipse_speed(p, ego)?;
            let dx = ego.x - o.x;
            let dy = ego.y - o.y;
            let axx = (p.a_scale * ve) * (p.a_scale * ve);
            let ayy = (p.b_scale * ve) * (p.b_scale * ve);
            let db_dx = 2.0 * dx / axx;
            let db_dy = 2.0 * dy / ayy;
            // Axes scale with speed only above the floor; in the clamp region
            // the speed sensitivity vanishes.
            let db_dv = if ego.v > p.v_floor { -(2.0 / ve) * (b + 1.0) } else { 0.0 };
            let (spo, cpo) = o.psi.sin_cos();
            let lf = db_dx * ego.v * cp + db_dy * ego.v * sp
                - db_dx * o.v * cpo
                - db_dy * o.v * spo;
            Ok(LieDerivatives { b, lf_b: lf, lg_b: Vector2::new(db_dv, 0.0), second: None })
        }
        BarrierSpec::SafeMerging(p) => {
            let o = require_neighbor(BarrierKind::SafeMerging, other)?;
            let s_ego = p.ego_route.progress(ego.x, ego.y);
            let te = p.ego_route.tangent();
            let to = p.other_route.tangent();
            let phi_slope = p.varphi / p.ego_route.length;
            // d s_ego/dt = velocity projected on the ego route tangent.
            let ds_ego = ego.v * (cp * te[0] + sp * te[1]);
            let (spo, cpo) = o.psi.sin_cos();
            let ds_other = o.v * (cpo * to[0] + spo * to[1]);
            let lf = ds_other - ds_ego * (1.0 + phi_slope * ego.v);
            Ok(LieDerivatives {
                b,
                lf_b: lf,
                lg_b: Vector2::new(-p.phi(s_ego), 0.0),
                second: None,
            })
        }
        BarrierSpec::RoadLeft(c) | BarrierSpec::RoadRight(c) => {
            let sign = if matches!(spec, BarrierSpec::RoadLeft(_)) { 1.0 } else { -1.0 };
            let ex = ego.x - c.center[0];
            let ey = ego.y - c.center[1];
            // db/dt = 2 (ex, ey) . velocity; no direct control dependence.
            let lf = sign * 2.0 * (ex * ego.v * cp + ey * ego.v * sp);
            // Gradient of db/dt over (x, y, psi, v), then contracted with f and g.
            let lf2 = sign * 2.0 * ego.v * ego.v;
            let dldot_dpsi = sign * 2.0 * ego.v * (-ex * sp + ey * cp);
            let dldot_dv = sign * 2.0 * (ex * cp + ey * sp);
            let lglf = Vector2::new(dldot_dv, dldot_dpsi * ego.v / params.wheelbase());
            Ok(LieDerivatives {
                b,
                lf_b: lf,
                lg_b: Vector2::zeros(),
                second: Some(SecondOrderLie { lf2_b: lf2, lglf_b: lglf }),
            })
        }
        BarrierSpec::SpeedMax { .. } => Ok(LieDerivatives {
            b,
            lf_b: 0.0,
            lg_b: Vector2::new(-1.0, 0.0),
            second: None,
        }),
        BarrierSpec::SpeedMin { .. } => Ok(LieDerivatives {
            b,
            lf_b: 0.0,
            lg_b: Vector2::new(1.0, 0.0),
            second: None,
        }),
    }
}

/// Diagnostic decomposition of a HOCBF row.
#[derive(Debug, Clone, Copy)]
pub struct RowComponents {
    /// L_f^m b: pure drift term of the highest derivative.
    pub lf_m: f64,
    /// L_g L_f^{m-1} b: control coefficients of the highest derivative.
    pub lglf: Vector2<f64>,
    /// Accumulated lower-order class-K derivative terms (theta_1 * db/dt for
    /// degree 2; zero for degree 1).
    pub s_term: f64,
    /// alpha_m(zeta_{m-1}): the final class-K term.
    pub alpha_m: f64,
}

/// One affine-in-control HOCBF constraint: `grad_u . u + constant >= 0`.
#[derive(Debug, Clone, Copy)]
pub struct HocbfRow {
    pub grad_u: Vector2<f64>,
    pub constant: f64,
    pub components: RowComponents,
}

impl HocbfRow {
    /// Row residual at a given control; nonnegative means satisfied.
    pub fn residual(&self, u: &Vector2<f64>) -> f64 {
        self.grad_u.dot(u) + self.constant
    }
}

/// Build the HOCBF row for a barrier at the given state with linear class-K
/// slopes `theta` (length = relative degree).
///
/// Degree 1: L_f b + L_g b . u + theta_1 b >= 0.
/// Degree 2: L_f^2 b + L_g L_f b . u + theta_1 db/dt + theta_2 (db/dt +
/// theta_1 b) >= 0.
pub fn build_hocbf_row(
    spec: &BarrierSpec,
    ego: &VehicleState,
    other: Option<&VehicleState>,
    theta: &[f64],
    params: &VehicleParams,
) -> Result<HocbfRow, BarrierError> {
    let m = relative_degree(spec.kind());
    assert_eq!(theta.len(), m, "{:?} needs {} class-K slopes, got {}", spec.kind(), m, theta.len());
    assert!(theta.iter().all(|t| *t > 0.0), "class-K slopes must be positive: {theta:?}");
    let lie = lie_derivatives(spec, ego, other, params)?;
    match m {
        1 => {
            let alpha = theta[0] * lie.b;
            Ok(HocbfRow {
                grad_u: lie.lg_b,
                constant: lie.lf_b + alpha,
                components: RowComponents {
                    lf_m: lie.lf_b,
                    lglf: lie.lg_b,
                    s_term: 0.0,
                    alpha_m: alpha,
                },
            })
        }
        2 => {
            let second = lie.second.expect("degree-2 barrier carries second-order terms");
            debug_assert!(lie.lg_b.norm() == 0.0, "degree-2 barrier must have L_g b = 0");
            let bdot = lie.lf_b;
            let zeta1 = bdot + theta[0] * lie.b;
            let s_term = theta[0] * bdot;
            let alpha = theta[1] * zeta1;
            Ok(HocbfRow {
                grad_u: second.lglf_b,
                constant: second.lf2_b + s_term + alpha,
                components: RowComponents {
                    lf_m: second.lf2_b,
                    lglf: second.lglf_b,
                    s_term,
                    alpha_m: alpha,
                },
            })
        }
        _ => unreachable!("relative degree is 1 or 2"),
    }
}

/// Which Lyapunov function a CLF row decreases.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum ClfSpec {
    /// V = (v - v_des)^2.
    SpeedTracking { v_des: f64 },
    /// V = d^2, lateral offset from the route centerline.
    LaneKeeping { route: RouteLine },
}

/// One relaxed CLF constraint: `grad_u . u + constant <= e` with slack e.
#[derive(Debug, Clone, Copy)]
pub struct ClfRow {
    pub grad_u: Vector2<f64>,
    pub constant: f64,
    /// The Lyapunov value itself, for diagnostics.
    pub value: f64,
}

impl ClfRow {
    /// Row residual minus slack; nonpositive means satisfied.
    pub fn residual(&self, u: &Vector2<f64>, slack: f64) -> f64 {
        self.grad_u.dot(u) + self.constant - slack
    }
}

/// Build a CLF row L_f V + L_g V . u + theta V <= e at the given state.
pub fn build_clf_row(spec: &ClfSpec, ego: &VehicleState, theta: f64) -> ClfRow {
    assert!(theta > 0.0, "CLF rate must be positive, got {theta}");
    match spec {
        ClfSpec::SpeedTracking { v_des } => {
            let dv = ego.v - v_des;
            ClfRow {
                grad_u: Vector2::new(2.0 * dv, 0.0),
                constant: theta * dv * dv,
                value: dv * dv,
            }
        }
        ClfSpec::LaneKeeping { route } => {
            let d = route.lateral_offset(ego.x, ego.y);
            let n = route.normal();
            let (sp, cp) = ego.psi.sin_cos();
            // V depends on position only, so dV/dt has no direct control term;
            // steering reaches V through the horizon states.
            let lf_v = 2.0 * d * ego.v * (n[0] * cp + n[1] * sp);
            ClfRow { grad_u: Vector2::zeros(), constant: lf_v + theta * d * d, value: d * d }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step_rk4, ControlInput};
    use approx::assert_relative_eq;

    fn params2() -> VehicleParams {
        VehicleParams { l_f: 1.0, l_r: 1.0 }
    }

    fn ellipse() -> BarrierSpec {
        BarrierSpec::RearEndEllipse(EllipseParams::default())
    }

    #[test]
    fn ellipse_matches_hand_value() {
        let b = eval_barrier(
            &ellipse(),
            &VehicleState::new(0.0, 0.0, 0.0, 10.0),
            Some(&VehicleState::new(20.0, 0.0, 0.0, 8.0)),
        )
        .unwrap();
        assert_relative_eq!(b, 400.0 / 324.0 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ellipse_boundary_is_zero_inside_negative() {
        // At gap = a_scale * v the longitudinal boundary is exact.
        let on_boundary = eval_barrier(
            &ellipse(),
            &VehicleState::new(0.0, 0.0, 0.0, 10.0),
            Some(&VehicleState::new(18.0, 0.0, 0.0, 10.0)),
        )
        .unwrap();
        assert_relative_eq!(on_boundary, 0.0, epsilon = 1e-12);
        let inside = eval_barrier(
            &ellipse(),
            &VehicleState::new(0.0, 0.0, 0.0, 10.0),
            Some(&VehicleState::new(8.0, 0.0, 0.0, 10.0)),
        )
        .unwrap();
        assert!(inside < 0.0);
    }

    #[test]
    fn ellipse_clamps_axes_below_speed_floor() {
        let slow = eval_barrier(
            &ellipse(),
            &VehicleState::new(0.0, 0.0, 0.0, 0.01),
            Some(&VehicleState::new(1.0, 0.0, 0.0, 0.0)),
        )
        .unwrap();
        let at_floor = eval_barrier(
            &ellipse(),
            &VehicleState::new(0.0, 0.0, 0.0, 0.1),
            Some(&VehicleState::new(1.0, 0.0, 0.0, 0.0)),
        )
        .unwrap();
        assert_relative_eq!(slow, at_floor, epsilon = 1e-12);
    }

    #[test]
    fn ellipse_rejects_nonpositive_speed() {
        let err = eval_barrier(
            &ellipse(),
            &VehicleState::new(0.0, 0.0, 0.0, 0.0),
            Some(&VehicleState::new(1.0, 0.0, 0.0, 0.0)),
        )
        .unwrap_err();
        assert!(matches!(err, BarrierError::DegenerateState { .. }));
    }

    #[test]
    fn two_vehicle_barriers_require_neighbor() {
        let err =
            eval_barrier(&ellipse(), &VehicleState::new(0.0, 0.0, 0.0, 10.0), None).unwrap_err();
        assert_eq!(err, BarrierError::MissingNeighbor { kind: BarrierKind::RearEndEllipse });
    }

    fn merging_spec() -> BarrierSpec {
        BarrierSpec::SafeMerging(MergingParams {
            ego_route: RouteLine::new([-100.0, 0.0], 0.0, 100.0),
            other_route: RouteLine::new([-96.6, -25.9], 0.26, 100.0),
            varphi: 1.2,
            delta: 3.74,
        })
    }

    #[test]
    fn merging_far_neighbor_is_inactive() {
        // Neighbor exactly at the merging point, ego far behind: large positive
        // barrier and a row constant that stays positive.
        let spec = merging_spec();
        let ego = VehicleState::new(-95.0, 0.0, 0.0, 10.0);
        let other = VehicleState::new(0.0, 0.0, 0.26, 12.0);
        let b = eval_barrier(&spec, &ego, Some(&other)).unwrap();
        // s_other = 100 (at MP, modulo the route origin rounding), s_ego = 5.
        assert!(b > 80.0, "expected large positive barrier, got {b}");
        let row =
            build_hocbf_row(&spec, &ego, Some(&other), &[1.0], &params2()).unwrap();
        assert!(row.constant > 0.0);
    }

    #[test]
    fn merging_headway_tightens_with_progress() {
        // Same gap, further along the route -> smaller barrier (headway term
        // grows with progress).
        let spec = merging_spec();
        let gap = 10.0;
        let early = eval_barrier(
            &spec,
            &VehicleState::new(-80.0, 0.0, 0.0, 10.0),
            Some(&VehicleState::new(-80.0 + gap, 0.0, 0.0, 10.0)),
        )
        .unwrap();
        let late = eval_barrier(
            &spec,
            &VehicleState::new(-20.0, 0.0, 0.0, 10.0),
            Some(&VehicleState::new(-20.0 + gap, 0.0, 0.0, 10.0)),
        )
        .unwrap();
        assert!(late < early, "late {late} should be tighter than early {early}");
    }

    #[test]
    fn road_left_matches_hand_value() {
        let spec = BarrierSpec::RoadLeft(RoadCircle { center: [10.0, 0.0], radius: 4.0 });
        let b = eval_barrier(&spec, &VehicleState::new(10.0, 5.0, 0.0, 3.0), None).unwrap();
        assert_relative_eq!(b, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn road_right_negates_to_inside_circle() {
        let spec = BarrierSpec::RoadRight(RoadCircle { center: [0.0, 0.0], radius: 5.0 });
        let inside = eval_barrier(&spec, &VehicleState::new(3.0, 0.0, 0.0, 3.0), None).unwrap();
        assert_relative_eq!(inside, 16.0, epsilon = 1e-12);
        let outside = eval_barrier(&spec, &VehicleState::new(6.0, 0.0, 0.0, 3.0), None).unwrap();
        assert!(outside < 0.0);
    }

    #[test]
    fn speed_barriers_are_linear_margins() {
        let bmax = eval_barrier(&BarrierSpec::SpeedMax { v_max: 20.0 },
            &VehicleState::new(0.0, 0.0, 0.0, 20.0), None).unwrap();
        assert_relative_eq!(bmax, 0.0, epsilon = 1e-15);
        let bmin = eval_barrier(&BarrierSpec::SpeedMin { v_min: 0.0 },
            &VehicleState::new(0.0, 0.0, 0.0, 3.5), None).unwrap();
        assert_relative_eq!(bmin, 3.5, epsilon = 1e-15);
    }

    #[test]
    fn road_lie_drift_matches_hand_values() {
        let spec = BarrierSpec::RoadLeft(RoadCircle { center: [10.0, 0.0], radius: 4.0 });
        let lie = lie_derivatives(
            &spec,
            &VehicleState::new(10.0, 5.0, 0.0, 10.0),
            None,
            &params2(),
        )
        .unwrap();
        // Directly above the center moving along +x: radial speed is zero.
        assert_relative_eq!(lie.lf_b, 0.0, epsilon = 1e-12);
        let lie2 = lie_derivatives(
            &spec,
            &VehicleState::new(12.0, 5.0, 0.0, 10.0),
            None,
            &params2(),
        )
        .unwrap();
        assert_relative_eq!(lie2.lf_b, 40.0, epsilon = 1e-12);
        // L_f^2 b = 2 v^2 regardless of position.
        assert_relative_eq!(lie2.second.unwrap().lf2_b, 200.0, epsilon = 1e-12);
    }

    /// Finite-difference oracle: db/dt by stepping the joint system (ego under
    /// a fixed control, neighbor drifting) forward/backward in time.
    fn fd_bdot(
        spec: &BarrierSpec,
        ego: &VehicleState,
        other: Option<&VehicleState>,
        u: &ControlInput,
        params: &VehicleParams,
    ) -> f64 {
        let h = 1e-6;
        let step = |s: &VehicleState, inp: &ControlInput, dt: f64| step_rk4(s, inp, params, dt);
        let eval = |dt: f64| {
            let e = step(ego, u, dt);
            let o = other.map(|o| step(o, &ControlInput::ZERO, dt));
            eval_barrier(spec, &e, o.as_ref()).unwrap()
        };
        (eval(h) - eval(-h)) / (2.0 * h)
    }

    fn check_first_order(spec: &BarrierSpec, ego: &VehicleState, other: Option<&VehicleState>) {
        let params = params2();
        let lie = lie_derivatives(spec, ego, other, &params).unwrap();
        for u in [
            ControlInput::ZERO,
            ControlInput::new(1.0, 0.0),
            ControlInput::new(0.0, 1.0),
            ControlInput::new(-2.5, 0.3),
        ] {
            let analytic = lie.lf_b + lie.lg_b.dot(&u.as_vector());
            let fd = fd_bdot(spec, ego, other, &u, &params);
            let denom = fd.abs().max(1e-8);
            assert!(
                (analytic - fd).abs() / denom < 1e-5,
                "{:?} first derivative: analytic {analytic} vs fd {fd} at u={u:?}",
                spec.kind()
            );
        }
    }

    #[test]
    fn first_lie_derivatives_match_finite_differences() {
        let ego = VehicleState::new(-40.0, 0.4, 0.05, 11.0);
        let lead = VehicleState::new(-20.0, -0.2, -0.02, 9.0);
        check_first_order(&ellipse(), &ego, Some(&lead));
        check_first_order(&merging_spec(), &ego, Some(&VehicleState::new(-30.0, -17.0, 0.26, 8.0)));
        check_first_order(
            &BarrierSpec::RoadLeft(RoadCircle { center: [-50.0, 10002.0], radius: 1e4 }),
            &ego,
            None,
        );
        check_first_order(
            &BarrierSpec::RoadRight(RoadCircle { center: [-50.0, 9998.0], radius: 1e4 }),
            &ego,
            None,
        );
        check_first_order(&BarrierSpec::SpeedMax { v_max: 20.0 }, &ego, None);
        check_first_order(&BarrierSpec::SpeedMin { v_min: 0.0 }, &ego, None);
    }

    #[test]
    fn second_lie_derivatives_match_finite_differences() {
        // Check d(bdot)/dt under constant control by centrally differencing
        // the (independently validated) first Lie derivative along the flow.
        // Differencing raw b twice would lose too many digits here: the road
        // barriers subtract r^2 ~ 1e8, leaving b with ~1e-8 absolute noise
        // that a division by h^2 turns into O(1) error.
        let params = params2();
        for (ego, circle) in [
            (
                VehicleState::new(-40.0, 0.4, 0.05, 11.0),
                RoadCircle { center: [-50.0, 10002.0], radius: 1e4 },
            ),
            (
                VehicleState::new(5.0, 9.0, 0.8, 6.0),
                RoadCircle { center: [0.0, 0.0], radius: 7.0 },
            ),
        ] {
            for spec in [BarrierSpec::RoadLeft(circle), BarrierSpec::RoadRight(circle)] {
                let lie = lie_derivatives(&spec, &ego, None, &params).unwrap();
                let second = lie.second.unwrap();
                for u in [ControlInput::ZERO, ControlInput::new(2.0, 0.0), ControlInput::new(0.0, 0.4)] {
                    let h = 1e-4;
                    let bdot = |dt: f64| {
                        let s = step_rk4(&ego, &u, &params, dt);
                        let l = lie_derivatives(&spec, &s, None, &params).unwrap();
                        l.lf_b + l.lg_b.dot(&u.as_vector())
                    };
                    let fd = (bdot(h) - bdot(-h)) / (2.0 * h);
                    let analytic = second.lf2_b + second.lglf_b.dot(&u.as_vector());
                    let denom = fd.abs().max(1e-8);
                    assert!(
                        (analytic - fd).abs() / denom < 1e-5,
                        "{:?} second derivative: analytic {analytic} vs fd {fd} at u={u:?}",
                        spec.kind()
                    );
                }
            }
        }
    }

    #[test]
    fn speed_max_row_matches_hand_values() {
        // v = 18, v_max = 20, theta = 2: row is -u + 4 >= 0.
        let row = build_hocbf_row(
            &BarrierSpec::SpeedMax { v_max: 20.0 },
            &VehicleState::new(0.0, 0.0, 0.0, 18.0),
            None,
            &[2.0],
            &params2(),
        )
        .unwrap();
        assert_relative_eq!(row.grad_u[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(row.grad_u[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(row.constant, 4.0, epsilon = 1e-15);
        // v = 10, theta = 1: -u + 10 >= 0.
        let row = build_hocbf_row(
            &BarrierSpec::SpeedMax { v_max: 20.0 },
            &VehicleState::new(0.0, 0.0, 0.0, 10.0),
            None,
            &[1.0],
            &params2(),
        )
        .unwrap();
        assert_relative_eq!(row.constant, 10.0, epsilon = 1e-15);
        assert!(row.residual(&Vector2::new(4.0, 0.0)) > 0.0);
    }

    #[test]
    fn degree_two_row_decomposition_adds_up() {
        let spec = BarrierSpec::RoadLeft(RoadCircle { center: [-50.0, 10002.0], radius: 1e4 });
        let ego = VehicleState::new(-40.0, 0.5, 0.03, 12.0);
        let theta = [0.7, 1.3];
        let row = build_hocbf_row(&spec, &ego, None, &theta, &params2()).unwrap();
        let lie = lie_derivatives(&spec, &ego, None, &params2()).unwrap();
        let zeta1 = lie.lf_b + theta[0] * lie.b;
        assert_relative_eq!(row.components.s_term, theta[0] * lie.lf_b, epsilon = 1e-9);
        assert_relative_eq!(row.components.alpha_m, theta[1] * zeta1, epsilon = 1e-9);
        assert_relative_eq!(
            row.constant,
            row.components.lf_m + row.components.s_term + row.components.alpha_m,
            epsilon = 1e-9
        );
    }

    #[test]
    fn steering_coefficient_is_zero_for_speed_coupled_rows() {
        // Mixed-degree treatment: ellipse and merging rows see acceleration
        // only; steering coefficient is exactly zero.
        let ego = VehicleState::new(-40.0, 0.0, 0.0, 10.0);
        let row = build_hocbf_row(
            &ellipse(),
            &ego,
            Some(&VehicleState::new(-20.0, 0.0, 0.0, 9.0)),
            &[1.0],
            &params2(),
        )
        .unwrap();
        assert_eq!(row.grad_u[1], 0.0);
        let row = build_hocbf_row(
            &merging_spec(),
            &ego,
            Some(&VehicleState::new(-30.0, -17.0, 0.26, 8.0)),
            &[1.0],
            &params2(),
        )
        .unwrap();
        assert_eq!(row.grad_u[1], 0.0);
    }

    #[test]
    fn speed_tracking_clf_matches_hand_value() {
        // v = 10, v_des = 15, theta = 1: -10 u + 25 <= e.
        let row = build_clf_row(
            &ClfSpec::SpeedTracking { v_des: 15.0 },
            &VehicleState::new(0.0, 0.0, 0.0, 10.0),
            1.0,
        );
        assert_relative_eq!(row.grad_u[0], -10.0, epsilon = 1e-15);
        assert_relative_eq!(row.constant, 25.0, epsilon = 1e-15);
        assert!(row.residual(&Vector2::new(2.5, 0.0), 0.0) <= 0.0);
    }

    #[test]
    fn lane_keeping_clf_is_zero_on_centerline() {
        let route = RouteLine::new([-100.0, 0.0], 0.0, 100.0);
        let row = build_clf_row(
            &ClfSpec::LaneKeeping { route },
            &VehicleState::new(-30.0, 0.0, 0.0, 12.0),
            1.5,
        );
        assert_relative_eq!(row.constant, 0.0, epsilon = 1e-15);
        assert_relative_eq!(row.value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lane_keeping_clf_matches_time_derivative() {
        let route = RouteLine::new([-100.0, 0.0], 0.0, 100.0);
        let spec = ClfSpec::LaneKeeping { route };
        let ego = VehicleState::new(-30.0, 0.8, 0.1, 12.0);
        let theta = 2.0;
        let row = build_clf_row(&spec, &ego, theta);
        let params = params2();
        let h = 1e-6;
        let value = |s: &VehicleState| {
            let d = route.lateral_offset(s.x, s.y);
            d * d
        };
        let u = ControlInput::new(1.0, -0.2);
        let vdot = (value(&step_rk4(&ego, &u, &params, h))
            - value(&step_rk4(&ego, &u, &params, -h)))
            / (2.0 * h);
        let analytic = row.grad_u.dot(&u.as_vector()) + row.constant - theta * value(&ego);
        assert_relative_eq!(analytic, vdot, epsilon = 1e-6);
    }

    #[test]
    fn class_k_slope_scales_restoring_term_when_unsafe() {
        // With b < 0 a larger slope demands a stronger recovery: the row
        // constant decreases (more braking needed).
        let ego = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let lead = VehicleState::new(8.0, 0.0, 0.0, 10.0);
        let gentle =
            build_hocbf_row(&ellipse(), &ego, Some(&lead), &[0.5], &params2()).unwrap();
        let strict =
            build_hocbf_row(&ellipse(), &ego, Some(&lead), &[4.0], &params2()).unwrap();
        assert!(strict.constant < gentle.constant);
    }
}
