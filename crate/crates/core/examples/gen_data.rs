//! The synthetic generators and their test-split shifts.
//!
//!     cargo run --example gen_data

use blob::data::{generate_task, Generator, Shift, TaskSpec};

fn main() -> blob::Result<()> {
    for generator in [
        Generator::GaussBlobs,
        Generator::TwoMoonsLike,
        Generator::RingVsDisk,
    ] {
        for shift in [Shift::None, Shift::Small, Shift::Large] {
            let spec = TaskSpec {
                generator,
                shift,
                ..TaskSpec::default()
            };
            let (train, test) = generate_task(&spec, 0)?;
            let mean = |d: &blob::Dataset, j: usize| {
                (0..d.len()).map(|i| d.x[(i, j)]).sum::<f64>() / d.len() as f64
            };
            println!(
                "{:<15} {:<6} train mean ({:+.3}, {:+.3}) test mean ({:+.3}, {:+.3})  {}",
                generator.name(),
                shift.name(),
                mean(&train, 0),
                mean(&train, 1),
                mean(&test, 0),
                mean(&test, 1),
                spec.shift_description()
            );
        }
    }
    let spec = TaskSpec {
        n_train: 5,
        n_test: 1,
        input_dim: 3,
        ..TaskSpec::default()
    };
    let (train, _) = generate_task(&spec, 0)?;
    train.write_csv(std::io::stdout())?;
    Ok(())
}
