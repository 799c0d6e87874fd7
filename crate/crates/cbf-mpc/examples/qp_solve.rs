//! Solve a small strictly convex QP with the dense dual active-set solver and
//! print the solution, the active constraints, and the KKT residual.
//!
//! minimize    1/2 x' H x + g' x
//! subject to  x_0 + x_1 + x_2 = 1
//!             x >= 0, x_1 - x_0 >= -0.8

use cbf_mpc::qp::{kkt_residual, solve_qp, QpProblem};
use nalgebra::{DMatrix, DVector};

fn main() {
    let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
    let g = DVector::from_vec(vec![-1.0, -2.0, 0.5]);
    let a_eq = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    let b_eq = DVector::from_vec(vec![1.0]);
    // Rows encode a_in x >= b_in.
    let a_in = DMatrix::from_row_slice(
        4,
        3,
        &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0],
    );
    let b_in = DVector::from_vec(vec![0.0, 0.0, 0.0, -0.8]);
    let p = QpProblem::new(h, g, a_eq, b_eq, a_in, b_in);

    let sol = solve_qp(&p, None).expect("strictly convex with a feasible polytope");
    println!("x* = [{:.6}, {:.6}, {:.6}]", sol.x[0], sol.x[1], sol.x[2]);
    println!("objective = {:.6}", p.objective(&sol.x));
    println!("equality dual = {:.6}", sol.duals_eq[0]);
    for (i, d) in sol.duals_in.iter().enumerate() {
        if *d > 0.0 {
            println!("inequality {i} active, dual = {d:.6}");
        }
    }
    println!("iterations = {}", sol.iterations);
    println!("KKT residual = {:.3e}", kkt_residual(&p, &sol));
}
