//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!   minimize   1/2 x' H x + g' x
//!   subject to A_eq x  = b_eq
//!              A_in x >= b_in
//! ```
//!
//! by a dense dual active-set method (Goldfarb-Idnani). The method starts at
//! the unconstrained minimum and adds violated constraints one at a time,
//! keeping dual feasibility throughout, so it needs no phase-1 feasible point
//! and certifies infeasibility exactly: if a violated constraint can neither
//! move the iterate (its normal is dependent on the active set) nor release an
//! active constraint (no positive dual step), the constraints are inconsistent.
//!
//! Determinism: constraint rows are normalized to unit norm, the most violated
//! row is selected each iteration, and exact ties resolve to the smallest row
//! index. Equality rows are installed first, in order, and never leave the
//! active set. H must be positive definite; a positive semidefinite H is
//! retried once with +1e-8 on the diagonal.
//!
//! [`kkt_residual`] is an independent first-order optimality checker that
//! shares no state with the solver; tests and the acceptance suite use it to
//! verify solutions, and callers can use it to audit any candidate point.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Convex QP data. Constraint matrices may have zero rows.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Self {
        let n = h.nrows();
        assert_eq!(h.ncols(), n, "H must be square");
        assert_eq!(g.len(), n, "g length must match H");
        assert_eq!(a_eq.ncols().max(n), n, "A_eq column count must match");
        assert_eq!(a_eq.nrows(), b_eq.len(), "A_eq/b_eq row mismatch");
        assert_eq!(a_in.nrows(), b_in.len(), "A_in/b_in row mismatch");
        if a_eq.nrows() > 0 {
            assert_eq!(a_eq.ncols(), n);
        }
        if a_in.nrows() > 0 {
            assert_eq!(a_in.ncols(), n);
        }
        Self { h, g, a_eq, b_eq, a_in, b_in }
    }

    /// A QP with no constraints at all.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = h.nrows();
        Self::new(h, g, DMatrix::zeros(0, n), DVector::zeros(0), DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.h.nrows()
    }

    /// Objective value at a point.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.h * x)[(0, 0)] + self.g.dot(x)
    }
}

/// Primal/dual solution. Inequality duals are nonnegative and zero for
/// inactive rows.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub duals_eq: DVector<f64>,
    pub duals_in: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QpError {
    /// No point satisfies the constraints (certified by an unbounded dual
    /// direction).
    #[error("constraints are inconsistent: no feasible point")]
    Infeasible,
    /// H is not positive definite even after the +1e-8 diagonal retry.
    #[error("Hessian is not positive definite")]
    NotConvex,
    /// Safety valve; should not trigger on well-posed problems.
    #[error("active-set iteration limit exceeded")]
    IterationLimit,
}

const DEPENDENCE_TOL: f64 = 1e-11;
const VIOLATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
struct ActiveRow {
    /// Index into the combined row list: equalities first, then inequalities.
    row: usize,
    /// +1/-1; equalities may be installed with a flipped normal.
    sign: f64,
    is_eq: bool,
    lambda: f64,
}

struct Workspace {
    /// J = L^{-T} Q, maintained so that J' N = [R; 0] for active normals N.
    j: DMatrix<f64>,
    /// Upper-triangular factor of the active normals in the J basis.
    r: DMatrix<f64>,
    active: Vec<ActiveRow>,
}

impl Workspace {
    fn q(&self) -> usize {
        self.active.len()
    }

    /// Givens rotation zeroing b into a: returns (c, s) with c*a + s*b = r.
    fn givens(a: f64, b: f64) -> (f64, f64) {
        if b == 0.0 {
            (1.0, 0.0)
        } else {
            let r = a.hypot(b);
            (a / r, b / r)
        }
    }

    /// Rotate components (i, i+1)... helper applying one rotation to a pair of
    /// J columns.
    fn rotate_j_columns(&mut self, i: usize, c: f64, s: f64) {
        let n = self.j.nrows();
        for row in 0..n {
            let a = self.j[(row, i)];
            let b = self.j[(row, i + 1)];
            self.j[(row, i)] = c * a + s * b;
            self.j[(row, i + 1)] = -s * a + c * b;
        }
    }

    /// Install a new active constraint whose J-basis coordinates are `d`.
    fn add(&mut self, d: &mut DVector<f64>, meta: ActiveRow) {
        let n = self.j.nrows();
        let q = self.q();
        for idx in ((q + 1)..n).rev() {
            let (c, s) = Self::givens(d[idx - 1], d[idx]);
            let a = d[idx - 1];
            let b = d[idx];
            d[idx - 1] = c * a + s * b;
            d[idx] = 0.0;
            self.rotate_j_columns(idx - 1, c, s);
        }
        for row in 0..=q {
            self.r[(row, q)] = d[row];
        }
        self.active.push(meta);
    }

    /// Remove the active constraint at position k and restore the triangular
    /// structure of R.
    fn drop_at(&mut self, k: usize) {
        let q = self.q();
        for col in k..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        self.active.remove(k);
        let q = self.q();
        for j in k..q {
            let a = self.r[(j, j)];
            let b = self.r[(j + 1, j)];
            let (c, s) = Self::givens(a, b);
            if s != 0.0 {
                for col in j..q {
                    let ra = self.r[(j, col)];
                    let rb = self.r[(j + 1, col)];
                    self.r[(j, col)] = c * ra + s * rb;
                    self.r[(j + 1, col)] = -s * ra + c * rb;
                }
                self.rotate_j_columns(j, c, s);
            }
        }
        for col in 0..q {
            self.r[(q, col)] = 0.0;
        }
    }

    /// Back-substitution on the leading q-by-q block of R.
    fn solve_r(&self, d1: &[f64]) -> Vec<f64> {
        let q = self.q();
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d1[i];
            for j in (i + 1)..q {
                acc -= self.r[(i, j)] * r[j];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }
}

struct NormalizedRows {
    /// Unit-norm rows, equalities first.
    rows: Vec<DVector<f64>>,
    bounds: Vec<f64>,
    /// Normalization factor applied to each row (1/original norm).
    scales: Vec<f64>,
    num_eq: usize,
}

fn normalize_rows(p: &QpProblem) -> Result<NormalizedRows, QpError> {
    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    let mut scales = Vec::new();
    let push = |a: DVector<f64>,
                b: f64,
                is_eq: bool,
                rows: &mut Vec<DVector<f64>>,
                bounds: &mut Vec<f64>,
                scales: &mut Vec<f64>|
     -> Result<(), QpError> {
        let norm = a.norm();
        if norm == 0.0 {
            // A zero row constrains nothing; it is either vacuous or
            // structurally infeasible.
            let bad = if is_eq { b != 0.0 } else { b > 0.0 };
            if bad {
                return Err(QpError::Infeasible);
            }
            rows.push(a);
            bounds.push(b);
            scales.push(1.0);
        } else {
            rows.push(a / norm);
            bounds.push(b / norm);
            scales.push(1.0 / norm);
        }
        Ok(())
    };
    for i in 0..p.a_eq.nrows() {
        push(
            p.a_eq.row(i).transpose().into_owned(),
            p.b_eq[i],
            true,
            &mut rows,
            &mut bounds,
            &mut scales,
        )?;
    }
    for i in 0..p.a_in.nrows() {
        push(
            p.a_in.row(i).transpose().into_owned(),
            p.b_in[i],
            false,
            &mut rows,
            &mut bounds,
            &mut scales,
        )?;
    }
    Ok(NormalizedRows { rows, bounds, scales, num_eq: p.a_eq.nrows() })
}

/// Solve the QP. `warm_hint` optionally lists inequality row indices expected
/// to be active; they are tried first (when violated) before the standard
/// most-violated selection, which can shorten the active-set path. The hint
/// never changes the solution, only the route to it.
pub fn solve_qp(p: &QpProblem, warm_hint: Option<&[usize]>) -> Result<QpSolution, QpError> {
    let n = p.num_vars();
    let chol = nalgebra::Cholesky::new(p.h.clone()).or_else(|| {
        let mut h = p.h.clone();
        for i in 0..n {
            h[(i, i)] += 1e-8;
        }
        nalgebra::Cholesky::new(h)
    });
    let chol = chol.ok_or(QpError::NotConvex)?;

    let mut x = -chol.solve(&p.g);
    // J := L^{-T}: solve L^T J = I.
    let lt = chol.l().transpose();
    let j = lt
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotConvex)?;
    let mut ws = Workspace { j, r: DMatrix::zeros(n, n), active: Vec::new() };

    let nr = normalize_rows(p)?;
    let m_total = nr.rows.len();
    let max_iters = 50 * (n + m_total) + 50;
    let mut iterations = 0usize;

    // Install equality constraints first; they never leave the active set.
    for e in 0..nr.num_eq {
        if nr.rows[e].norm() == 0.0 {
            continue;
        }
        let s = nr.rows[e].dot(&x) - nr.bounds[e];
        let sign = if s > 0.0 { -1.0 } else { 1.0 };
        let normal = &nr.rows[e] * sign;
        let mut d = ws.j.transpose() * &normal;
        let q = ws.q();
        let z_norm2: f64 = (q..n).map(|i| d[i] * d[i]).sum();
        if z_norm2 <= DEPENDENCE_TOL {
            if s.abs() <= VIOLATION_TOL {
                continue; // redundant but consistent
            }
            return Err(QpError::Infeasible);
        }
        // Full step to satisfy the equality; other active rows are all
        // equalities whose duals adjust freely.
        let z = ws.j.columns(q, n - q) * d.rows(q, n - q).into_owned();
        let t2 = s.abs() / z_norm2;
        let r = ws.solve_r(d.as_slice());
        for (k, meta) in ws.active.iter_mut().enumerate() {
            meta.lambda -= t2 * r[k];
        }
        x += z * t2;
        ws.add(&mut d, ActiveRow { row: e, sign, is_eq: true, lambda: t2 });
        iterations += 1;
    }

    let mut hints: Vec<usize> = warm_hint
        .map(|h| h.iter().rev().filter_map(|i| {
            let row = nr.num_eq + *i;
            (row < m_total).then_some(row)
        }).collect())
        .unwrap_or_default();

    'outer: loop {
        iterations += 1;
        if iterations > max_iters {
            return Err(QpError::IterationLimit);
        }

        // Pick the next violated inequality: consume warm hints first, then
        // scan for the most violated row (ties to the smallest index).
        let mut chosen: Option<(usize, f64)> = None;
        while let Some(row) = hints.pop() {
            if ws.active.iter().any(|a| a.row == row) {
                continue;
            }
            let s = nr.rows[row].dot(&x) - nr.bounds[row];
            if s < -VIOLATION_TOL {
                chosen = Some((row, s));
                break;
            }
        }
        if chosen.is_none() {
            let mut worst = -VIOLATION_TOL;
            for row in nr.num_eq..m_total {
                if nr.rows[row].norm() == 0.0 || ws.active.iter().any(|a| a.row == row) {
                    continue;
                }
                let s = nr.rows[row].dot(&x) - nr.bounds[row];
                if s < worst {
                    worst = s;
                    chosen = Some((row, s));
                }
            }
        }
        let Some((row, mut s)) = chosen else {
            break 'outer;
        };

        let normal = nr.rows[row].clone();
        let mut lambda_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iters {
                return Err(QpError::IterationLimit);
            }
            let mut d = ws.j.transpose() * &normal;
            let q = ws.q();
            let z_norm2: f64 = (q..n).map(|i| d[i] * d[i]).sum();
            let r = ws.solve_r(d.as_slice());

            // Dual blocking step: only inequality rows can be released.
            let mut t1 = f64::INFINITY;
            let mut blocker = None;
            for (k, meta) in ws.active.iter().enumerate() {
                if meta.is_eq || r[k] <= 1e-12 {
                    continue;
                }
                let ratio = meta.lambda / r[k];
                if ratio < t1 {
                    t1 = ratio;
                    blocker = Some(k);
                }
            }
            let t2 = if z_norm2 > DEPENDENCE_TOL { -s / z_norm2 } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                // Neither a primal step nor a dual release exists: the
                // constraint system is inconsistent.
                return Err(QpError::Infeasible);
            }

            for (k, meta) in ws.active.iter_mut().enumerate() {
                meta.lambda -= t * r[k];
            }
            lambda_p += t;

            if t2.is_finite() {
                let z = ws.j.columns(q, n - q) * d.rows(q, n - q).into_owned();
                x += z * t;
            }

            if t2.is_finite() && t == t2 {
                ws.add(&mut d, ActiveRow { row, sign: 1.0, is_eq: false, lambda: lambda_p });
                continue 'outer;
            }
            // Partial (or pure dual) step: release the blocker and retry the
            // same row against the smaller active set.
            ws.drop_at(blocker.expect("finite t1 implies a blocking row"));
            s = normal.dot(&x) - nr.bounds[row];
            if s >= -VIOLATION_TOL {
                // The release alone restored feasibility of this row.
                continue 'outer;
            }
        }
    }

    // Unscale duals back to the original rows.
    let mut duals_eq = DVector::zeros(p.a_eq.nrows());
    let mut duals_in = DVector::zeros(p.a_in.nrows());
    for meta in &ws.active {
        if meta.is_eq {
            duals_eq[meta.row] = meta.lambda * meta.sign * nr.scales[meta.row];
        } else {
            let i = meta.row - nr.num_eq;
            duals_in[i] = meta.lambda * nr.scales[meta.row];
        }
    }
    Ok(QpSolution { x, duals_eq, duals_in, iterations })
}

/// Independent first-order optimality (KKT) residual for a candidate
/// solution: the largest violation among stationarity, primal feasibility,
/// dual feasibility, and complementary slackness. Shares nothing with the
/// solver's internal state.
pub fn kkt_residual(p: &QpProblem, sol: &QpSolution) -> f64 {
    let mut grad = &p.h * &sol.x + &p.g;
    if p.a_eq.nrows() > 0 {
        grad -= p.a_eq.transpose() * &sol.duals_eq;
    }
    if p.a_in.nrows() > 0 {
        grad -= p.a_in.transpose() * &sol.duals_in;
    }
    let mut res = grad.amax();
    for i in 0..p.a_eq.nrows() {
        res = res.max((p.a_eq.row(i).transpose().dot(&sol.x) - p.b_eq[i]).abs());
    }
    for i in 0..p.a_in.nrows() {
        let slack = p.a_in.row(i).transpose().dot(&sol.x) - p.b_in[i];
        res = res.max(-slack.min(0.0)); // primal violation
        res = res.max(-sol.duals_in[i].min(0.0)); // dual sign
        res = res.max((sol.duals_in[i] * slack).abs()); // complementarity
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dm(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn dv(data: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(data)
    }

    #[test]
    fn scalar_bound_becomes_active() {
        // min 1/2 (u-3)^2 s.t. u <= 1: optimum at the bound.
        let p = QpProblem::new(
            dm(1, 1, &[1.0]),
            dv(&[-3.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
            dm(1, 1, &[-1.0]),
            dv(&[-1.0]),
        );
        let sol = solve_qp(&p, None).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.duals_in[0], 2.0, epsilon = 1e-10);
        assert!(kkt_residual(&p, &sol) < 1e-9);
    }

    #[test]
    fn symmetric_halfspace_splits_evenly() {
        // min u1^2 + u2^2 s.t. u1 + u2 >= 2 -> (1, 1).
        let p = QpProblem::new(
            dm(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            dv(&[0.0, 0.0]),
            DMatrix::zeros(0, 2),
            dv(&[]),
            dm(1, 2, &[1.0, 1.0]),
            dv(&[2.0]),
        );
        let sol = solve_qp(&p, None).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-10);
        assert!(kkt_residual(&p, &sol) < 1e-9);
    }

    #[test]
    fn inactive_constraints_get_zero_duals() {
        let p = QpProblem::new(
            dm(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            dv(&[-2.0, -4.0]),
            DMatrix::zeros(0, 2),
            dv(&[]),
            dm(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            dv(&[-10.0, -10.0]),
        );
        let sol = solve_qp(&p, None).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-10);
        assert_eq!(sol.duals_in[0], 0.0);
        assert_eq!(sol.duals_in[1], 0.0);
    }

    #[test]
    fn equality_constraints_are_respected() {
        // min x1^2 + x2^2 s.t. x1 + x2 = 4 -> (2, 2).
        let p = QpProblem::new(
            dm(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            dv(&[0.0, 0.0]),
            dm(1, 2, &[1.0, 1.0]),
            dv(&[4.0]),
            DMatrix::zeros(0, 2),
            dv(&[]),
        );
        let sol = solve_qp(&p, None).unwrap();
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-10);
        assert!(kkt_residual(&p, &sol) < 1e-9);
    }

    #[test]
    fn contradictory_bounds_are_certified_infeasible() {
        // u >= 1 and -u >= 0 cannot hold together.
        let p = QpProblem::new(
            dm(1, 1, &[1.0]),
            dv(&[0.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
            dm(2, 1, &[1.0, -1.0]),
            dv(&[1.0, 0.0]),
        );
        assert_eq!(solve_qp(&p, None).unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn redundant_duplicate_rows_are_harmless() {
        let p = QpProblem::new(
            dm(1, 1, &[1.0]),
            dv(&[-3.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
            dm(3, 1, &[-1.0, -1.0, -2.0]),
            dv(&[-1.0, -1.0, -2.0]),
        );
        let sol = solve_qp(&p, None).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert!(kkt_residual(&p, &sol) < 1e-9);
    }

    #[test]
    fn zero_rows_are_vacuous_or_infeasible() {
        let feasible = QpProblem::new(
            dm(1, 1, &[1.0]),
            dv(&[1.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
            dm(1, 1, &[0.0]),
            dv(&[-1.0]),
        );
        assert!(solve_qp(&feasible, None).is_ok());
        let infeasible = QpProblem::new(
            dm(1, 1, &[1.0]),
            dv(&[1.0]),
            DMatrix::zeros(0, 1),
            dv(&[]),
            dm(1, 1, &[0.0]),
            dv(&[1.0]),
        );
        assert_eq!(solve_qp(&infeasible, None).unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn warm_hint_reaches_same_solution() {
        let p = QpProblem::new(
            dm(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            dv(&[0.0, 0.0]),
            DMatrix::zeros(0, 2),
            dv(&[]),
            dm(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            dv(&[2.0, -10.0]),
        );
        let cold = solve_qp(&p, None).unwrap();
        let warm = solve_qp(&p, Some(&[0])).unwrap();
        assert_relative_eq!(cold.x[0], warm.x[0], epsilon = 1e-12);
        assert_relative_eq!(cold.x[1], warm.x[1], epsilon = 1e-12);
    }

    #[test]
    fn semidefinite_hessian_is_regularized_and_solved() {
        // Curvature only in x1; x2 pinned by an equality.
        let p = QpProblem::new(
            dm(2, 2, &[2.0, 0.0, 0.0, 0.0]),
            dv(&[-2.0, 1.0]),
            dm(1, 2, &[0.0, 1.0]),
            dv(&[3.0]),
            DMatrix::zeros(0, 2),
            dv(&[]),
        );
        let sol = solve_qp(&p, None).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], 3.0, epsilon = 1e-9);
    }

    /// Brute-force reference: enumerate candidate active sets, solve each
    /// equality-constrained KKT system, and keep the best feasible candidate
    /// with nonnegative duals.
    fn brute_force(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
        let n = p.num_vars();
        let m = p.a_in.nrows();
        let peq = p.a_eq.nrows();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << m) {
            let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            if active.len() + peq > n {
                continue;
            }
            let rows = peq + active.len();
            let mut kkt = DMatrix::zeros(n + rows, n + rows);
            kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
            let mut rhs = DVector::zeros(n + rows);
            for i in 0..n {
                rhs[i] = -p.g[i];
            }
            for (r, i) in (0..peq).enumerate() {
                for c in 0..n {
                    kkt[(n + r, c)] = p.a_eq[(i, c)];
                    kkt[(c, n + r)] = p.a_eq[(i, c)];
                }
                rhs[n + r] = p.b_eq[i];
            }
            for (r, &i) in active.iter().enumerate() {
                let r = peq + r;
                for c in 0..n {
                    kkt[(n + r, c)] = p.a_in[(i, c)];
                    kkt[(c, n + r)] = p.a_in[(i, c)];
                }
                rhs[n + r] = p.b_in[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let feasible = (0..m).all(|i| p.a_in.row(i).transpose().dot(&x) >= p.b_in[i] - 1e-8)
                && (0..peq).all(|i| (p.a_eq.row(i).transpose().dot(&x) - p.b_eq[i]).abs() < 1e-8);
            // The KKT block carries +A' in the upper-right, so the solved
            // multipliers are the negatives of the >=-constraint duals.
            let dual_ok = active
                .iter()
                .enumerate()
                .all(|(r, _)| sol[n + peq + r] <= 1e-8);
            if feasible && dual_ok {
                let obj = p.objective(&x);
                if best.as_ref().map(|(_, b)| obj < b - 1e-12).unwrap_or(true) {
                    best = Some((x, obj));
                }
            }
        }
        best
    }

    fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize, peq: usize, feasible: bool) -> QpProblem {
        let mat = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
        };
        let m0 = mat(n, n, rng);
        let h = &m0 * m0.transpose() + DMatrix::identity(n, n);
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let xbar = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a_in = mat(m, n, rng);
        let mut b_in = DVector::zeros(m);
        for i in 0..m {
            let margin: f64 = if feasible {
                rng.gen_range(0.0..1.0)
            } else {
                rng.gen_range(-0.5..0.5)
            };
            b_in[i] = a_in.row(i).transpose().dot(&xbar) - margin;
        }
        let a_eq = mat(peq, n, rng);
        let b_eq = &a_eq * &xbar;
        QpProblem::new(h, g, a_eq, b_eq, a_in, b_in)
    }

    #[test]
    fn random_feasible_qps_match_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(0..=7);
            let peq = rng.gen_range(0..=n.min(2) - if n == 1 { 1 } else { 0 });
            let p = random_qp(&mut rng, n, m, peq, true);
            let sol = solve_qp(&p, None).unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            assert!(
                kkt_residual(&p, &sol) < 1e-8,
                "trial {trial}: kkt residual {}",
                kkt_residual(&p, &sol)
            );
            let (x_ref, obj_ref) = brute_force(&p).expect("feasible by construction");
            assert!(
                (p.objective(&sol.x) - obj_ref).abs() < 1e-7,
                "trial {trial}: objective {} vs reference {}",
                p.objective(&sol.x),
                obj_ref
            );
            assert!((sol.x - x_ref).amax() < 1e-6, "trial {trial}: solutions differ");
        }
    }

    #[test]
    fn random_possibly_infeasible_qps_agree_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut infeasible_seen = 0;
        for trial in 0..60 {
            let n = rng.gen_range(1..=3);
            let m = rng.gen_range(2..=8);
            let p = random_qp(&mut rng, n, m, 0, false);
            let reference = brute_force(&p);
            match solve_qp(&p, None) {
                Ok(sol) => {
                    assert!(kkt_residual(&p, &sol) < 1e-8, "trial {trial}");
                    let (_, obj_ref) = reference.expect("solver says feasible");
                    assert!((p.objective(&sol.x) - obj_ref).abs() < 1e-7, "trial {trial}");
                }
                Err(QpError::Infeasible) => {
                    infeasible_seen += 1;
                    assert!(reference.is_none(), "trial {trial}: reference found a point");
                }
                Err(e) => panic!("trial {trial}: unexpected {e}"),
            }
        }
        assert!(infeasible_seen > 3, "generator should produce some infeasible cases");
    }

    #[test]
    fn solver_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_qp(&mut rng, 4, 7, 1, true);
        let a = solve_qp(&p, None).unwrap();
        let b = solve_qp(&p, None).unwrap();
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(a.iterations, b.iterations);
    }
}
