//! Exponential temporal correlation with a nugget and the separable
//! residual covariance of the two responses.

use nalgebra::DMatrix;
use visitbias::joint::{assemble_sigma, omega_exponential};

fn main() -> visitbias::Result<()> {
    let times = [0.0, 0.3, 0.35, 1.2];
    let omega = omega_exponential(&times, 0.5, 0.4)?;
    println!("Ω (d = 0.5, c0 = 0.4):{}", omega.entries);
    let (se, sz, rho) = (1.5, 0.05, -0.5);
    let lambda = DMatrix::from_row_slice(2, 2, &[se * se, rho * se * sz, rho * se * sz, sz * sz]);
    let sigma = assemble_sigma(&lambda, &omega)?;
    println!("Σ is {}x{}; Σ[0,4] = ρ σε σζ = {:.4}", sigma.nrows(), sigma.ncols(), sigma[(0, 4)]);
    match omega_exponential(&[0.0, 1.0, 1.0], 0.5, 0.0) {
        Err(e) => println!("duplicate times without a nugget: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
