//! Horizon transcription and the SQP solver.
//!
//! A receding-horizon problem is transcribed into a dense nonlinear program
//! over the decision vector
//!
//! ```text
//!   z = (x_0, ..., x_N, u_0, ..., u_{N-1}, e_0, ..., e_{N-1})
//! ```
//!
//! with 4 state entries per stage, 2 control entries per stage, and one slack
//! entry per CLF row per stage. Equality constraints pin `x_0` and enforce the
//! RK4 dynamics between stages; inequality constraints are the control bounds
//! (linear), the HOCBF safety rows, and the slack-relaxed CLF rows.
//!
//! The objective is exactly quadratic (speed tracking, lane offset, control
//! effort, slack penalties), so the SQP subproblems use the true Hessian plus
//! a small iterate-centered damping term that covers the cost's null
//! directions. Safety rows are linearized with central finite differences in
//! the states; their control gradients are exact because every row is affine
//! in the controls.
//!
//! When a subproblem is infeasible the solver switches to an elastic step
//! that minimizes the l1 norm of the HOCBF violations (dynamics, initial
//! state, and control bounds stay hard), and the reported violation is always
//! re-measured on the true nonlinear rows at the returned point — never on
//! the linearization.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::barrier::{build_clf_row, build_hocbf_row, BarrierSpec, ClfSpec};
use crate::dynamics::{
    rollout, step_jacobians, step_rk4, ControlBounds, ControlInput, VehicleParams, VehicleState,
};
use crate::geometry::RouteLine;
use crate::qp::{solve_qp, QpError, QpProblem};

/// One safety constraint applied at every control stage. `neighbor` holds the
/// other agent's predicted states over the horizon (index k is used at stage
/// k); barriers that only involve the ego vehicle leave it `None`.
#[derive(Debug, Clone)]
pub struct BarrierConstraint {
    pub spec: BarrierSpec,
    /// Class-K slopes, one per relative degree of the barrier.
    pub class_k: Vec<f64>,
    pub neighbor: Option<Vec<VehicleState>>,
    /// Constraint tightening subtracted from the row. The row enforces the
    /// barrier condition at sample instants only; between samples the held
    /// control lets the condition drift by O(dt), and a boundary-riding
    /// solution can carry the barrier itself slightly through zero. A small
    /// positive margin absorbs that drift.
    pub margin: f64,
}

/// One tracking (CLF) row with its convergence rate and the quadratic weight
/// on its relaxation slack.
#[derive(Debug, Clone)]
pub struct ClfConstraint {
    pub spec: ClfSpec,
    pub rate: f64,
    pub slack_weight: f64,
}

/// Steering slew limit: |steer_k - steer_{k-1}| <= rate * dt across the
/// horizon, anchored at the steer applied on the previous executed step.
/// Without it the optimizer can weave — saw-tooth steering reduces progress
/// along the route at no acceleration cost, which a tight vehicle-coupled
/// barrier row otherwise rewards.
#[derive(Debug, Clone, Copy)]
pub struct SteerSlew {
    /// Maximum steering rate (rad/s).
    pub rate: f64,
    /// Steering angle applied at the previous executed step.
    pub prev: f64,
}

/// Quadratic stage cost: speed tracking toward `v_des`, squared lateral
/// offset from `route`, and control effort.
#[derive(Debug, Clone)]
pub struct StageCost {
    pub w_speed: f64,
    pub w_lane: f64,
    pub w_accel: f64,
    pub w_steer: f64,
    pub v_des: f64,
    pub route: RouteLine,
}

#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub initial_state: VehicleState,
    pub horizon: usize,
    pub dt: f64,
    pub vehicle: VehicleParams,
    pub bounds: ControlBounds,
    pub cost: StageCost,
    pub barriers: Vec<BarrierConstraint>,
    pub clfs: Vec<ClfConstraint>,
    /// Optional steering slew rows (hard, always self-consistent).
    pub slew: Option<SteerSlew>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NlpStatus {
    /// All constraints hold to 1e-8 and the first-order optimality residual
    /// is at or below 1e-6.
    Feasible,
    /// The constraints could not be met; `violation` is the l1 norm of the
    /// true nonlinear constraint violations at the returned point.
    Infeasible { violation: f64 },
    /// Iteration cap reached at a constraint-satisfying but not fully
    /// optimality-certified point.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub z: DVector<f64>,
    pub status: NlpStatus,
    pub kkt_residual: f64,
    /// l1 norm of constraint violations at `z` (equalities plus inequality
    /// shortfalls), measured on the true nonlinear rows.
    pub constraint_violation: f64,
    pub objective: f64,
    pub iterations: usize,
}

const KKT_TOL: f64 = 1e-6;
const FEAS_TOL: f64 = 1e-8;
const MAX_SQP_ITERS: usize = 50;
const MAX_ELASTIC_RESCUES: usize = 2;
/// Iterate-centered damping added to the cost Hessian inside each QP. The
/// cost has flat directions (heading, position along the route), and without
/// curvature there the unconstrained QP seed explodes and loses precision.
/// Because the damping is centered on the current iterate its influence
/// vanishes as steps shrink, so converged points satisfy the undamped
/// optimality conditions.
const QP_DAMPING: f64 = 1e-4;
/// Weight of the quadratic tie-breaker in the elastic problem. It keeps the
/// l1 objective's flat optimal faces from producing arbitrary endpoints
/// without perturbing the violation measure itself, which is always
/// re-evaluated on the true rows.
const ELASTIC_REG: f64 = 1e-2;
const FD_STEP: f64 = 1e-6;

struct Linearization {
    a_eq: DMatrix<f64>,
    c_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    c_in: DVector<f64>,
}

impl NlpProblem {
    pub fn num_clf(&self) -> usize {
        self.clfs.len()
    }

    pub fn num_vars(&self) -> usize {
        let n = self.horizon;
        4 * (n + 1) + 2 * n + self.num_clf() * n
    }

    pub fn state_index(&self, k: usize) -> usize {
        debug_assert!(k <= self.horizon);
        4 * k
    }

    pub fn control_index(&self, k: usize) -> usize {
        debug_assert!(k < self.horizon);
        4 * (self.horizon + 1) + 2 * k
    }

    pub fn slack_index(&self, k: usize) -> usize {
        debug_assert!(k < self.horizon);
        4 * (self.horizon + 1) + 2 * self.horizon + self.num_clf() * k
    }

    pub fn state_of(&self, z: &DVector<f64>, k: usize) -> VehicleState {
        let i = self.state_index(k);
        VehicleState::new(z[i], z[i + 1], z[i + 2], z[i + 3])
    }

    pub fn control_of(&self, z: &DVector<f64>, k: usize) -> ControlInput {
        let i = self.control_index(k);
        ControlInput::new(z[i], z[i + 1])
    }

    pub fn states_of(&self, z: &DVector<f64>) -> Vec<VehicleState> {
        (0..=self.horizon).map(|k| self.state_of(z, k)).collect()
    }

    pub fn controls_of(&self, z: &DVector<f64>) -> Vec<ControlInput> {
        (0..self.horizon).map(|k| self.control_of(z, k)).collect()
    }

    fn num_eq_rows(&self) -> usize {
        4 + 4 * self.horizon
    }

    fn num_in_rows(&self) -> usize {
        let n = self.horizon;
        let slew = if self.slew.is_some() { 2 * n } else { 0 };
        4 * n + self.barriers.len() * n + self.num_clf() * n + slew
    }

    /// First HOCBF row index within the inequality block; the HOCBF rows form
    /// one contiguous run, which is what the elastic relaxation softens.
    fn hocbf_row_range(&self) -> std::ops::Range<usize> {
        let start = 4 * self.horizon;
        start..start + self.barriers.len() * self.horizon
    }

    fn neighbor_at(&self, b: &BarrierConstraint, k: usize) -> Option<VehicleState> {
        b.neighbor.as_ref().map(|traj| {
            assert!(
                traj.len() > k,
                "neighbor trajectory too short: stage {k} of {} states",
                traj.len()
            );
            traj[k]
        })
    }

    /// Barrier rows are evaluated on a copy whose speed is floored at a small
    /// positive value. Intermediate SQP iterates can wander to v <= 0 where
    /// the velocity-scaled ellipse is undefined; flooring keeps every iterate
    /// evaluable while the speed-bound rows push the solution back into range.
    fn barrier_safe(state: &VehicleState) -> VehicleState {
        let mut s = *state;
        if !s.v.is_finite() {
            panic!("non-finite speed in barrier row evaluation");
        }
        s.v = s.v.max(0.1);
        s
    }

    fn hocbf_value(&self, b: &BarrierConstraint, state: &VehicleState, u: &ControlInput, k: usize) -> (f64, Vector2<f64>) {
        let safe = Self::barrier_safe(state);
        let other = self.neighbor_at(b, k);
        let row = build_hocbf_row(&b.spec, &safe, other.as_ref(), &b.class_k, &self.vehicle)
            .expect("barrier row evaluation failed on a floored state");
        (row.constant - b.margin + row.grad_u.dot(&u.as_vector()), row.grad_u)
    }

    /// CLF row in `>= 0` orientation: e - (L_f V + L_g V u + rate * V) >= 0.
    fn clf_value(&self, c: &ClfConstraint, state: &VehicleState, u: &ControlInput, slack: f64) -> (f64, Vector2<f64>) {
        let row = build_clf_row(&c.spec, state, c.rate);
        let lhs = row.constant + row.grad_u.dot(&u.as_vector());
        (slack - lhs, -row.grad_u)
    }

    /// Equality residuals: x_0 pin followed by per-stage dynamics defects
    /// x_{k+1} - F(x_k, u_k).
    pub fn eval_equalities(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(self.num_eq_rows());
        let init = self.initial_state.as_vector();
        for i in 0..4 {
            c[i] = z[self.state_index(0) + i] - init[i];
        }
        for k in 0..self.horizon {
            let xk = self.state_of(z, k);
            let uk = self.control_of(z, k);
            let pred = step_rk4(&xk, &uk, &self.vehicle, self.dt).as_vector();
            let next = self.state_of(z, k + 1).as_vector();
            for i in 0..4 {
                c[4 + 4 * k + i] = next[i] - pred[i];
            }
        }
        c
    }

    /// Inequality residuals in `>= 0` orientation, ordered: control bounds
    /// (4 per stage), HOCBF rows (stage-major), CLF rows (stage-major), then
    /// steering slew rows (2 per stage) when enabled.
    pub fn eval_inequalities(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(self.num_in_rows());
        let n = self.horizon;
        for k in 0..n {
            let u = self.control_of(z, k);
            c[4 * k] = u.accel - self.bounds.accel_min;
            c[4 * k + 1] = self.bounds.accel_max - u.accel;
            c[4 * k + 2] = u.steer - self.bounds.steer_min;
            c[4 * k + 3] = self.bounds.steer_max - u.steer;
        }
        let hocbf_start = 4 * n;
        for k in 0..n {
            let x = self.state_of(z, k);
            let u = self.control_of(z, k);
            for (j, b) in self.barriers.iter().enumerate() {
                c[hocbf_start + k * self.barriers.len() + j] = self.hocbf_value(b, &x, &u, k).0;
            }
        }
        let clf_start = hocbf_start + self.barriers.len() * n;
        for k in 0..n {
            let x = self.state_of(z, k);
            let u = self.control_of(z, k);
            for (j, cl) in self.clfs.iter().enumerate() {
                let slack = z[self.slack_index(k) + j];
                c[clf_start + k * self.num_clf() + j] = self.clf_value(cl, &x, &u, slack).0;
            }
        }
        if let Some(sl) = &self.slew {
            let slew_start = clf_start + self.num_clf() * n;
            let lim = sl.rate * self.dt;
            for k in 0..n {
                let steer = self.control_of(z, k).steer;
                let prev = if k == 0 { sl.prev } else { self.control_of(z, k - 1).steer };
                c[slew_start + 2 * k] = lim - (steer - prev);
                c[slew_start + 2 * k + 1] = lim + (steer - prev);
            }
        }
        c
    }

    /// Sum of equality magnitudes and inequality shortfalls at `z`.
    pub fn constraint_violation(&self, z: &DVector<f64>) -> f64 {
        let eq = self.eval_equalities(z);
        let iq = self.eval_inequalities(z);
        eq.iter().map(|v| v.abs()).sum::<f64>() + iq.iter().map(|v| (-v).max(0.0)).sum::<f64>()
    }

    /// Exact quadratic objective data (constant terms dropped).
    pub fn objective_matrices(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_vars();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let normal = Vector2::from(self.cost.route.normal());
        let origin = Vector2::new(self.cost.route.origin[0], self.cost.route.origin[1]);
        let offset = normal.dot(&origin);
        for k in 0..=self.horizon {
            let i = self.state_index(k);
            // Speed tracking: w (v - v_des)^2.
            h[(i + 3, i + 3)] += 2.0 * self.cost.w_speed;
            g[i + 3] += -2.0 * self.cost.w_speed * self.cost.v_des;
            // Lateral offset: w (n . p - n . origin)^2, quadratic in (x, y).
            for a in 0..2 {
                for b in 0..2 {
                    h[(i + a, i + b)] += 2.0 * self.cost.w_lane * normal[a] * normal[b];
                }
                g[i + a] += -2.0 * self.cost.w_lane * offset * normal[a];
            }
        }
        for k in 0..self.horizon {
            let i = self.control_index(k);
            h[(i, i)] += 2.0 * self.cost.w_accel;
            h[(i + 1, i + 1)] += 2.0 * self.cost.w_steer;
            let s = self.slack_index(k);
            for (j, cl) in self.clfs.iter().enumerate() {
                h[(s + j, s + j)] += 2.0 * cl.slack_weight;
            }
        }
        (h, g)
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        let (h, g) = self.objective_matrices();
        0.5 * (z.transpose() * &h * z)[(0, 0)] + g.dot(z)
    }

    /// Rollout-consistent starting point: zero controls, dynamics-exact
    /// states, and slacks set so the CLF rows start satisfied.
    pub fn initial_guess(&self) -> DVector<f64> {
        let controls = vec![ControlInput::ZERO; self.horizon];
        self.guess_from_controls(&controls)
    }

    pub fn guess_from_controls(&self, controls: &[ControlInput]) -> DVector<f64> {
        assert_eq!(controls.len(), self.horizon);
        let clamped: Vec<ControlInput> = controls.iter().map(|u| self.bounds.clamp(*u)).collect();
        let states = rollout(&self.initial_state, &clamped, &self.vehicle, self.dt);
        let mut z = DVector::zeros(self.num_vars());
        for (k, s) in states.iter().enumerate() {
            let i = self.state_index(k);
            z.rows_mut(i, 4).copy_from(&s.as_vector());
        }
        for (k, u) in clamped.iter().enumerate() {
            let i = self.control_index(k);
            z[i] = u.accel;
            z[i + 1] = u.steer;
        }
        for k in 0..self.horizon {
            let x = states[k];
            let u = clamped[k];
            for (j, cl) in self.clfs.iter().enumerate() {
                let row = build_clf_row(&cl.spec, &x, cl.rate);
                let lhs = row.constant + row.grad_u.dot(&u.as_vector());
                z[self.slack_index(k) + j] = lhs.max(0.0);
            }
        }
        z
    }

    fn linearize(&self, z: &DVector<f64>) -> Linearization {
        let n = self.num_vars();
        let nh = self.horizon;
        let c_eq = self.eval_equalities(z);
        let mut a_eq = DMatrix::zeros(self.num_eq_rows(), n);
        for i in 0..4 {
            a_eq[(i, self.state_index(0) + i)] = 1.0;
        }
        for k in 0..nh {
            let xk = self.state_of(z, k);
            let uk = self.control_of(z, k);
            let (ja, jb) = step_jacobians(&xk, &uk, &self.vehicle, self.dt);
            let row = 4 + 4 * k;
            for i in 0..4 {
                a_eq[(row + i, self.state_index(k + 1) + i)] = 1.0;
                for c in 0..4 {
                    a_eq[(row + i, self.state_index(k) + c)] = -ja[(i, c)];
                }
                for c in 0..2 {
                    a_eq[(row + i, self.control_index(k) + c)] = -jb[(i, c)];
                }
            }
        }

        let c_in = self.eval_inequalities(z);
        let mut a_in = DMatrix::zeros(self.num_in_rows(), n);
        for k in 0..nh {
            let ui = self.control_index(k);
            a_in[(4 * k, ui)] = 1.0;
            a_in[(4 * k + 1, ui)] = -1.0;
            a_in[(4 * k + 2, ui + 1)] = 1.0;
            a_in[(4 * k + 3, ui + 1)] = -1.0;
        }
        let hocbf_start = 4 * nh;
        for k in 0..nh {
            let x = self.state_of(z, k);
            let u = self.control_of(z, k);
            for (j, b) in self.barriers.iter().enumerate() {
                let row = hocbf_start + k * self.barriers.len() + j;
                let (_, grad_u) = self.hocbf_value(b, &x, &u, k);
                a_in[(row, self.control_index(k))] = grad_u[0];
                a_in[(row, self.control_index(k) + 1)] = grad_u[1];
                for c in 0..4 {
                    let mut xp = x.as_vector();
                    let mut xm = x.as_vector();
                    xp[c] += FD_STEP;
                    xm[c] -= FD_STEP;
                    let vp = self.hocbf_value(b, &VehicleState::from_vector(&xp), &u, k).0;
                    let vm = self.hocbf_value(b, &VehicleState::from_vector(&xm), &u, k).0;
                    a_in[(row, self.state_index(k) + c)] = (vp - vm) / (2.0 * FD_STEP);
                }
            }
        }
        let clf_start = hocbf_start + self.barriers.len() * nh;
        for k in 0..nh {
            let x = self.state_of(z, k);
            let u = self.control_of(z, k);
            for (j, cl) in self.clfs.iter().enumerate() {
                let row = clf_start + k * self.num_clf() + j;
                let slack = z[self.slack_index(k) + j];
                let (_, grad_u) = self.clf_value(cl, &x, &u, slack);
                a_in[(row, self.control_index(k))] = grad_u[0];
                a_in[(row, self.control_index(k) + 1)] = grad_u[1];
                a_in[(row, self.slack_index(k) + j)] = 1.0;
                for c in 0..4 {
                    let mut xp = x.as_vector();
                    let mut xm = x.as_vector();
                    xp[c] += FD_STEP;
                    xm[c] -= FD_STEP;
                    let vp = self
                        .clf_value(cl, &VehicleState::from_vector(&xp), &u, slack)
                        .0;
                    let vm = self
                        .clf_value(cl, &VehicleState::from_vector(&xm), &u, slack)
                        .0;
                    a_in[(row, self.state_index(k) + c)] = (vp - vm) / (2.0 * FD_STEP);
                }
            }
        }
        if self.slew.is_some() {
            let slew_start = clf_start + self.num_clf() * nh;
            for k in 0..nh {
                let steer_col = self.control_index(k) + 1;
                a_in[(slew_start + 2 * k, steer_col)] = -1.0;
                a_in[(slew_start + 2 * k + 1, steer_col)] = 1.0;
                if k > 0 {
                    let prev_col = self.control_index(k - 1) + 1;
                    a_in[(slew_start + 2 * k, prev_col)] = 1.0;
                    a_in[(slew_start + 2 * k + 1, prev_col)] = -1.0;
                }
            }
        }
        Linearization { a_eq, c_eq, a_in, c_in }
    }
}

/// Result of an elastic (least-violation) solve at a fixed linearization
/// point, with the violation re-measured on the true nonlinear rows.
#[derive(Debug, Clone)]
pub struct ElasticOutcome {
    pub z: DVector<f64>,
    /// l1 violation of all constraints at `z`, true nonlinear rows.
    pub violation: f64,
}

/// Find a least-violation point near `z0`. Dynamics, initial-state, and
/// control-bound rows stay hard; HOCBF rows receive l1-penalized slacks; CLF
/// rows are omitted because their own decision-variable slacks can always
/// absorb them. Iterates a few times so the hard nonlinear dynamics rows
/// converge, and polishes with a least-distance step when the rows turn out
/// to be satisfiable after all.
pub fn elastic_feasibility(problem: &NlpProblem, z0: &DVector<f64>) -> ElasticOutcome {
    let n = problem.num_vars();
    let soft = problem.hocbf_row_range();
    let num_soft = soft.len();
    let mut z = z0.clone();
    let mut best: Option<ElasticOutcome> = None;

    for _ in 0..8 {
        let lin = problem.linearize(&z);
        let nv = n + num_soft;
        let mut h = DMatrix::zeros(nv, nv);
        let mut g = DVector::zeros(nv);
        for i in 0..n {
            h[(i, i)] = ELASTIC_REG;
        }
        for t in 0..num_soft {
            h[(n + t, n + t)] = ELASTIC_REG;
            g[n + t] = 1.0;
        }
        // Hard rows: equalities and control bounds.
        let mut a_eq = DMatrix::zeros(lin.a_eq.nrows(), nv);
        a_eq.view_mut((0, 0), (lin.a_eq.nrows(), n)).copy_from(&lin.a_eq);
        let b_eq = -&lin.c_eq;
        let num_bounds = 4 * problem.horizon;
        let mut a_in = DMatrix::zeros(num_bounds + 2 * num_soft, nv);
        let mut b_in = DVector::zeros(num_bounds + 2 * num_soft);
        for r in 0..num_bounds {
            for c in 0..n {
                a_in[(r, c)] = lin.a_in[(r, c)];
            }
            b_in[r] = -lin.c_in[r];
        }
        // Soft rows: a_j d + c_j + t_j >= 0 and t_j >= 0.
        for (t, r) in soft.clone().enumerate() {
            let row = num_bounds + t;
            for c in 0..n {
                a_in[(row, c)] = lin.a_in[(r, c)];
            }
            a_in[(row, n + t)] = 1.0;
            b_in[row] = -lin.c_in[r];
            a_in[(num_bounds + num_soft + t, n + t)] = 1.0;
        }
        let qp = QpProblem::new(h, g, a_eq, b_eq, a_in, b_in);
        let Ok(sol) = solve_qp(&qp, None) else {
            // Hard rows in conflict with each other can only come from a bad
            // linearization point; keep whatever we have.
            break;
        };
        let step = sol.x.rows(0, n).into_owned();
        let slack_mass: f64 = (0..num_soft).map(|t| sol.x[n + t].max(0.0)).sum();
        let candidate = &z + &step;

        if slack_mass <= 1e-9 {
            // Rows are satisfiable here: swap the l1 objective for a pure
            // least-distance polish against the same linearization.
            let mut hp = DMatrix::zeros(n, n);
            for i in 0..n {
                hp[(i, i)] = 1.0;
            }
            let mut a_all = DMatrix::zeros(lin.a_in.nrows(), n);
            a_all.copy_from(&lin.a_in);
            let b_all = -&lin.c_in;
            let qp2 = QpProblem::new(
                hp,
                DVector::zeros(n),
                {
                    let mut ae = DMatrix::zeros(lin.a_eq.nrows(), n);
                    ae.copy_from(&lin.a_eq);
                    ae
                },
                -&lin.c_eq,
                a_all,
                b_all,
            );
            if let Ok(p) = solve_qp(&qp2, None) {
                let polished = &z + p.x;
                let v = problem.constraint_violation(&polished);
                if best.as_ref().map(|b| v < b.violation).unwrap_or(true) {
                    best = Some(ElasticOutcome { z: polished, violation: v });
                }
            }
        }

        let v = problem.constraint_violation(&candidate);
        let improved = best.as_ref().map(|b| v < b.violation - 1e-12).unwrap_or(true);
        if improved {
            best = Some(ElasticOutcome { z: candidate.clone(), violation: v });
        }
        z = candidate;
        if best.as_ref().map(|b| b.violation <= FEAS_TOL).unwrap_or(false) || !improved {
            break;
        }
    }

    best.unwrap_or_else(|| ElasticOutcome { violation: problem.constraint_violation(&z), z })
}

/// First-order optimality residual of the NLP at `z` given multipliers from
/// the last quadratic subproblem: stationarity of the Lagrangian plus
/// complementarity of the inequality rows.
fn nlp_kkt_residual(
    lin: &Linearization,
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    z: &DVector<f64>,
    duals_eq: &DVector<f64>,
    duals_in: &DVector<f64>,
) -> f64 {
    let mut grad = h * z + g;
    grad -= lin.a_eq.transpose() * duals_eq;
    grad -= lin.a_in.transpose() * duals_in;
    let mut res = grad.amax();
    for i in 0..lin.c_in.len() {
        res = res.max((duals_in[i] * lin.c_in[i]).abs());
        res = res.max(-duals_in[i].min(0.0));
    }
    res
}

/// Solve the transcription by sequential quadratic programming. `warm_start`
/// seeds the iterate (typically the previous solution shifted one stage);
/// pass `None` to start from the zero-control rollout.
pub fn solve_nlp_sqp(problem: &NlpProblem, warm_start: Option<&DVector<f64>>) -> NlpSolution {
    assert!(problem.horizon >= 1, "horizon must be at least one stage");
    let (h_obj, g_obj) = problem.objective_matrices();
    let n = problem.num_vars();
    let mut z = match warm_start {
        Some(w) => {
            assert_eq!(w.len(), n, "warm start has wrong dimension");
            w.clone()
        }
        None => problem.initial_guess(),
    };

    let mut rho: f64 = 10.0;
    let mut rescues = 0usize;
    let mut hint: Vec<usize> = Vec::new();
    let mut last_kkt = f64::INFINITY;

    for iter in 1..=MAX_SQP_ITERS {
        let lin = problem.linearize(&z);
        let mut h_qp = h_obj.clone();
        for i in 0..n {
            h_qp[(i, i)] += QP_DAMPING;
        }
        let grad = &h_obj * &z + &g_obj;
        let qp = QpProblem::new(
            h_qp,
            grad.clone(),
            lin.a_eq.clone(),
            -&lin.c_eq,
            lin.a_in.clone(),
            -&lin.c_in,
        );
        let sol = match solve_qp(&qp, Some(&hint)) {
            Ok(s) => s,
            Err(QpError::Infeasible) if rescues < MAX_ELASTIC_RESCUES => {
                rescues += 1;
                let rescue = elastic_feasibility(problem, &z);
                if rescue.violation > problem.constraint_violation(&z) - 1e-12 {
                    // No progress toward feasibility is possible; report the
                    // better of the two points honestly.
                    let z_out = if rescue.violation < problem.constraint_violation(&z) {
                        rescue.z
                    } else {
                        z
                    };
                    let violation = problem.constraint_violation(&z_out);
                    return NlpSolution {
                        objective: problem.objective(&z_out),
                        z: z_out,
                        status: NlpStatus::Infeasible { violation },
                        kkt_residual: f64::INFINITY,
                        constraint_violation: violation,
                        iterations: iter,
                    };
                }
                z = rescue.z;
                continue;
            }
            Err(_) => {
                let outcome = elastic_feasibility(problem, &z);
                let violation = outcome.violation;
                return NlpSolution {
                    objective: problem.objective(&outcome.z),
                    z: outcome.z,
                    status: NlpStatus::Infeasible { violation },
                    kkt_residual: f64::INFINITY,
                    constraint_violation: violation,
                    iterations: iter,
                };
            }
        };
        rescues = 0;
        hint = (0..sol.duals_in.len()).filter(|&i| sol.duals_in[i] > 1e-10).collect();

        let step = sol.x.clone();
        let step_norm = step.amax();
        last_kkt = nlp_kkt_residual(&lin, &h_obj, &g_obj, &z, &sol.duals_eq, &sol.duals_in);
        let violation = problem.constraint_violation(&z);
        if violation <= FEAS_TOL && last_kkt <= KKT_TOL {
            return finish(problem, z, NlpStatus::Feasible, last_kkt, iter);
        }
        if step_norm <= 1e-12 {
            break;
        }

        // l1 merit with a penalty weight that dominates the multipliers.
        let dual_max = sol.duals_eq.amax().max(sol.duals_in.amax());
        rho = rho.max(10.0 + 10.0 * dual_max);
        let merit = |zz: &DVector<f64>| {
            problem.objective(zz) + rho * problem.constraint_violation(zz)
        };
        let base = merit(&z);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..16 {
            let trial = &z + &step * alpha;
            if merit(&trial) < base - 1e-12 {
                z = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let violation = problem.constraint_violation(&z);
    if violation <= FEAS_TOL {
        return finish(problem, z, NlpStatus::MaxIterations, last_kkt, MAX_SQP_ITERS);
    }
    let outcome = elastic_feasibility(problem, &z);
    if outcome.violation <= FEAS_TOL {
        return finish(problem, outcome.z, NlpStatus::MaxIterations, last_kkt, MAX_SQP_ITERS);
    }
    NlpSolution {
        objective: problem.objective(&outcome.z),
        constraint_violation: outcome.violation,
        status: NlpStatus::Infeasible { violation: outcome.violation },
        z: outcome.z,
        kkt_residual: last_kkt,
        iterations: MAX_SQP_ITERS,
    }
}

/// Final packaging: re-roll the states from the controls so the dynamics hold
/// to machine precision, unless doing so would push an inequality row past
/// the feasibility tolerance.
fn finish(
    problem: &NlpProblem,
    z: DVector<f64>,
    status: NlpStatus,
    kkt: f64,
    iterations: usize,
) -> NlpSolution {
    let polished = {
        let mut p = z.clone();
        let controls = problem.controls_of(&z);
        let states = rollout(&problem.initial_state, &controls, &problem.vehicle, problem.dt);
        for (k, s) in states.iter().enumerate() {
            p.rows_mut(problem.state_index(k), 4).copy_from(&s.as_vector());
        }
        p
    };
    let keep_polish = problem
        .eval_inequalities(&polished)
        .iter()
        .all(|v| *v >= -FEAS_TOL);
    let z_final = if keep_polish { polished } else { z };
    NlpSolution {
        objective: problem.objective(&z_final),
        constraint_violation: problem.constraint_violation(&z_final),
        kkt_residual: kkt,
        status,
        z: z_final,
        iterations,
    }
}
