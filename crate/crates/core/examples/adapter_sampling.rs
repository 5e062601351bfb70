//! Forward passes through one variational adapter: posterior mean, a shared
//! weight draw, and flipout.
//!
//!     cargo run --example adapter_sampling

use blob::{FlipoutMasks, SeededRng, VariationalAdapter};

fn main() -> blob::Result<()> {
    let mut rng = SeededRng::new(0);
    let (m, n, r, batch) = (4, 3, 2, 5);
    let adapter = VariationalAdapter::new(
        rng.gaussian_matrix(m, n),
        rng.gaussian_matrix(m, r),
        rng.gaussian_matrix(r, n).scale(0.5),
        rng.uniform_matrix(r, n, 0.3, 0.6),
    )?;
    let h = rng.gaussian_matrix(n, batch);

    println!("std of A (G o G):\n{:?}", adapter.omega());
    let mean = adapter.forward_mean(&h)?;
    println!("mean forward:\n{mean:?}");

    let noise = rng.gaussian_matrix(r, n);
    let shared = adapter.forward_naive_shared(&h, &noise)?;
    println!("one shared draw:\n{shared:?}");

    // unit sign masks reduce flipout to the shared draw
    let unit = adapter.forward_flipout(&h, &FlipoutMasks::unit(noise, batch))?;
    let gap = unit
        .as_slice()
        .iter()
        .zip(shared.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("flipout with unit masks vs shared draw: max gap {gap:.2e}");

    let flip = adapter.forward_flipout(&h, &FlipoutMasks::sample(&mut rng, n, batch, r))?;
    println!("flipout draw:\n{flip:?}");
    Ok(())
}
