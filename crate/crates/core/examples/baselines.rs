//! All six methods on one task and seed.
//!
//!     cargo run --release --example baselines

use blob::baselines::{predict_baseline, train_baseline, BaselineSpec, Method};
use blob::data::{generate_task, TaskSpec};
use blob::metrics::{ece, DEFAULT_BINS};
use blob::TrainConfig;

fn main() -> blob::Result<()> {
    let (train, test) = generate_task(&TaskSpec::default(), 1)?;
    let config = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };
    println!(
        "{:<11} {:>3} {:>7} {:>7} {:>7}",
        "method", "N", "acc", "ece", "nll"
    );
    for method in Method::ALL {
        let spec = BaselineSpec::new(method);
        let model = train_baseline(&spec, &train, &config)?;
        let ns: &[usize] = if method.is_sampling() { &[0, 10] } else { &[0] };
        for &n in ns {
            let probs = predict_baseline(&model, &test.columns(), n, 1)?;
            let r = ece(&probs, &test.labels, DEFAULT_BINS)?;
            println!(
                "{:<11} {n:>3} {:>7.4} {:>7.4} {:>7.4}",
                method.name(),
                r.acc,
                r.ece,
                r.nll
            );
        }
    }
    Ok(())
}
