//! Kinematic bicycle model and its discretization.
//!
//! The continuous-time model is affine in the control,
//!
//! ```text
//!   x_dot   = v cos(psi)
//!   y_dot   = v sin(psi)
//!   psi_dot = phi * v / (l_f + l_r)
//!   v_dot   = u
//! ```
//!
//! with control input (u, phi) = (acceleration, steering angle). Everything
//! downstream — barrier rows, the horizon transcription, the simulator — uses
//! one fixed discretization of this model: a single classic RK4 step per
//! control period with the input held constant (zero-order hold). Using the
//! same step for prediction and simulation is what makes the forward-invariance
//! audit meaningful.
//!
//! Step Jacobians are computed analytically by propagating the chain rule
//! through the four RK4 stages (not by finite differences); the tests check
//! them against central differences.

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

/// Planar vehicle state: position, heading, speed.
///
/// The heading is not wrapped; it evolves continuously so that Jacobians and
/// finite differences stay consistent across the +/-pi seam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64) -> Self {
        Self { x, y, psi, v }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.psi, self.v)
    }

    pub fn from_vector(z: &Vector4<f64>) -> Self {
        Self { x: z[0], y: z[1], psi: z[2], v: z[3] }
    }
}

/// Control input: longitudinal acceleration `accel` (u) and steering angle
/// `steer` (phi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub steer: f64,
}

impl ControlInput {
    pub fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }

    pub const ZERO: ControlInput = ControlInput { accel: 0.0, steer: 0.0 };

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.accel, self.steer)
    }
}

/// Geometric vehicle parameters: distances from the center of gravity to the
/// front and rear axles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleParams {
    pub l_f: f64,
    pub l_r: f64,
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        // Mid-size passenger car.
        Self { l_f: 1.0, l_r: 1.0 }
    }
}

/// Box bounds on the control input. `accel_min` is negative (braking).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlBounds {
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_min: f64,
    pub steer_max: f64,
}

impl ControlBounds {
    pub fn clamp(&self, input: ControlInput) -> ControlInput {
        ControlInput {
            accel: input.accel.clamp(self.accel_min, self.accel_max),
            steer: input.steer.clamp(self.steer_min, self.steer_max),
        }
    }

    pub fn contains(&self, input: ControlInput, tol: f64) -> bool {
        input.accel >= self.accel_min - tol
            && input.accel <= self.accel_max + tol
            && input.steer >= self.steer_min - tol
            && input.steer <= self.steer_max + tol
    }
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            accel_min: -5.0,
            accel_max: 4.0,
            steer_min: -std::f64::consts::FRAC_PI_4,
            steer_max: std::f64::consts::FRAC_PI_4,
        }
    }
}

/// Drift term f(x): the state derivative with zero control.
pub fn drift(state: &VehicleState) -> Vector4<f64> {
    Vector4::new(state.v * state.psi.cos(), state.v * state.psi.sin(), 0.0, 0.0)
}

/// Control matrix g(x): columns are the derivative directions for unit
/// acceleration and unit steering.
pub fn control_matrix(state: &VehicleState, params: &VehicleParams) -> Matrix4x2<f64> {
    let mut g = Matrix4x2::zeros();
    g[(2, 1)] = state.v / params.wheelbase();
    g[(3, 0)] = 1.0;
    g
}

/// Continuous-time state derivative f(x) + g(x) u.
pub fn eval_derivative(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> Vector4<f64> {
    drift(state) + control_matrix(state, params) * input.as_vector()
}

/// Jacobian of the continuous-time derivative w.r.t. the state.
fn derivative_state_jacobian(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> Matrix4<f64> {
    let (s, c) = state.psi.sin_cos();
    let mut j = Matrix4::zeros();
    j[(0, 2)] = -state.v * s;
    j[(0, 3)] = c;
    j[(1, 2)] = state.v * c;
    j[(1, 3)] = s;
    j[(2, 3)] = input.steer / params.wheelbase();
    j
}

/// One RK4 step of length `dt` with the input held constant over the step.
pub fn step_rk4(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> VehicleState {
    let x0 = state.as_vector();
    let eval = |z: &Vector4<f64>| {
        eval_derivative(&VehicleState::from_vector(z), input, params)
    };
    let k1 = eval(&x0);
    let k2 = eval(&(x0 + k1 * (dt / 2.0)));
    let k3 = eval(&(x0 + k2 * (dt / 2.0)));
    let k4 = eval(&(x0 + k3 * dt));
    VehicleState::from_vector(&(x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
}

/// Analytic Jacobians (A, B) of the discrete RK4 step w.r.t. the state and the
/// input, obtained by differentiating each RK4 stage and chaining.
pub fn step_jacobians(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let x0 = state.as_vector();
    let eval = |z: &Vector4<f64>| eval_derivative(&VehicleState::from_vector(z), input, params);
    let jac_x = |z: &Vector4<f64>| {
        derivative_state_jacobian(&VehicleState::from_vector(z), input, params)
    };
    let jac_u = |z: &Vector4<f64>| control_matrix(&VehicleState::from_vector(z), params);

    let id = Matrix4::identity();

    let k1 = eval(&x0);
    let x2 = x0 + k1 * (dt / 2.0);
    let k2 = eval(&x2);
    let x3 = x0 + k2 * (dt / 2.0);
    let k3 = eval(&x3);
    let x4 = x0 + k3 * dt;

    let dk1_dx = jac_x(&x0);
    let dk2_dx = jac_x(&x2) * (id + dk1_dx * (dt / 2.0));
    let dk3_dx = jac_x(&x3) * (id + dk2_dx * (dt / 2.0));
    let dk4_dx = jac_x(&x4) * (id + dk3_dx * dt);

    let dk1_du = jac_u(&x0);
    let dk2_du = jac_u(&x2) + jac_x(&x2) * dk1_du * (dt / 2.0);
    let dk3_du = jac_u(&x3) + jac_x(&x3) * dk2_du * (dt / 2.0);
    let dk4_du = jac_u(&x4) + jac_x(&x4) * dk3_du * dt;

    let a = id + (dk1_dx + dk2_dx * 2.0 + dk3_dx * 2.0 + dk4_dx) * (dt / 6.0);
    let b = (dk1_du + dk2_du * 2.0 + dk3_du * 2.0 + dk4_du) * (dt / 6.0);
    (a, b)
}

/// Apply a sequence of inputs from an initial state. Returns N+1 states with
/// the initial state first.
pub fn rollout(
    state: &VehicleState,
    inputs: &[ControlInput],
    params: &VehicleParams,
    dt: f64,
) -> Vec<VehicleState> {
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(*state);
    let mut cur = *state;
    for input in inputs {
        cur = step_rk4(&cur, input, params, dt);
        out.push(cur);
    }
    out
}
