//! Gradient descent on the KL of one scalar posterior std, starting far
//! below the prior, under the square and softplus parameterizations.
//!
//!     cargo run --release --example param_race

use blob::bench::{race, RACE_LR, RACE_SIGMA_P, RACE_SIGMA_Q0};
use blob::ParamMap;

fn main() -> blob::Result<()> {
    println!("sigma_p {RACE_SIGMA_P}, sigma_q0 {RACE_SIGMA_Q0}, lr {RACE_LR}");
    println!("{:>7} {:>10} {:>10}", "step", "square", "softplus");
    let sq =
        ParamMap::Square.race_trajectory(RACE_SIGMA_P, RACE_SIGMA_Q0, RACE_LR, 50_000, 5_000)?;
    let sp =
        ParamMap::Softplus.race_trajectory(RACE_SIGMA_P, RACE_SIGMA_Q0, RACE_LR, 50_000, 5_000)?;
    for ((step, a), (_, b)) in sq.iter().zip(&sp) {
        println!("{step:>7} {a:>10.5} {b:>10.5}");
    }
    let rho = ParamMap::Softplus.inverse(RACE_SIGMA_Q0)?;
    println!(
        "softplus KL gradient at the start: {:.4}",
        ParamMap::Softplus.kl_grad_rho(rho, RACE_SIGMA_P)?
    );
    let r = race()?;
    println!(
        "steps to sigma_q >= 0.9: square {} (cap {}), softplus {} (cap {})",
        r.square_steps, r.square_cap, r.softplus_steps, r.softplus_cap
    );
    Ok(())
}
