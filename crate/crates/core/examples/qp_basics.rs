//! The convex QP solver on a small box- and inequality-constrained problem.
//!
//!     cargo run --release --example qp_basics

use ensemble_pulse::qpcore::{kkt_check, qp_solve, QProblem};
use nalgebra::{DMatrix, DVector};

fn main() -> ensemble_pulse::Result<()> {
    // min ½‖z − (2, 2, 2)‖² s.t. z₁ + z₂ + z₃ ≤ 3, z₁ = z₂, 0 ≤ z ≤ 1.5
    let p = QProblem::new(DMatrix::identity(3, 3), DVector::from_element(3, -2.0))
        .with_inequalities(DMatrix::from_element(1, 3, 1.0), DVector::from_element(1, 3.0))
        .with_equalities(DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]), DVector::zeros(1))
        .with_bounds(DVector::zeros(3), DVector::from_element(3, 1.5));
    let sol = qp_solve(&p, 1e-10, 10_000)?;
    println!("status {:?} after {} iterations", sol.status, sol.iterations);
    println!("z = {:.6?}", sol.z.as_slice());
    println!("objective {:.6}", p.objective(&sol.z));
    println!("{:?}", kkt_check(&p, &sol.z)?);
    Ok(())
}
