//! The closed-form KL of a low-rank adapter against three references: the
//! ridge-regularized Gaussian KL over the full weight, a Monte Carlo
//! estimate, and the same KL under a rotated prior factor.
//!
//!     cargo run --release --example kl_oracles

use blob::bench::random_orthogonal;
use blob::kl::{
    build_full_posterior, build_full_prior, kl_closed_form, kl_full_weight_regularized,
    kl_monte_carlo,
};
use blob::{PriorSpec, SeededRng, VariationalAdapter};

fn main() -> blob::Result<()> {
    let mut rng = SeededRng::new(3);
    let adapter = VariationalAdapter::new(
        rng.gaussian_matrix(5, 4),
        rng.gaussian_matrix(5, 2),
        rng.gaussian_matrix(2, 4).scale(0.5),
        rng.uniform_matrix(2, 4, 0.3, 0.8),
    )?;
    let prior = PriorSpec::new(0.2)?;

    let closed = kl_closed_form(&adapter.mean_a, &adapter.g, prior)?;
    println!("closed form        {closed:.8}");

    let q = build_full_posterior(&adapter)?;
    let p = build_full_prior(adapter.w0(), &adapter.b, prior)?;
    for lambda in [1e-2, 1e-4, 1e-6, 1e-8] {
        let full = kl_full_weight_regularized(&q, &p, lambda)?;
        println!(
            "full weight, ridge {lambda:.0e}  {full:.8}  (rel gap {:.2e})",
            (full - closed).abs() / closed
        );
    }

    let rotated = adapter.b.matmul(&random_orthogonal(&mut rng, 2))?;
    let p_rot = build_full_prior(adapter.w0(), &rotated, prior)?;
    println!(
        "prior factor B Q   {:.8}",
        kl_full_weight_regularized(&q, &p_rot, 1e-8)?
    );

    let (est, se) = kl_monte_carlo(&adapter.mean_a, &adapter.g, prior, 1_000_000, 11)?;
    println!(
        "monte carlo        {est:.8} +- {se:.5}  (z = {:.2})",
        (est - closed) / se
    );
    Ok(())
}
