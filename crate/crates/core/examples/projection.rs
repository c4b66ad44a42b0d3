//! Frobenius projections onto Schatten balls of each order.

use drrlq::linalg::{eigenvalues_desc, schatten_norm_sym, SchattenOrder};
use drrlq::projections::{project_schatten, SchattenBall};
use nalgebra::DMatrix;

fn main() -> drrlq::Result<()> {
    let x = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, -2.0, 0.5, 0.0, 0.5, 1.0]);
    println!("input spectrum {:.4?}", eigenvalues_desc(&x));
    for p in SchattenOrder::ALL {
        let ball = SchattenBall::origin(3, 2.0, p)?;
        let y = project_schatten(&x, &ball)?;
        println!(
            "{p:?}: norm {:.4} -> {:.4}, spectrum {:.4?}, moved {:.4}",
            schatten_norm_sym(&x, p),
            schatten_norm_sym(&y, p),
            eigenvalues_desc(&y),
            (&y - &x).norm()
        );
    }
    Ok(())
}
