//! BLoB against maximum likelihood on a two-class blob task, five seeds.
//!
//!     cargo run --release --example calibration_gap

use blob::baselines::{predict_baseline, train_baseline, BaselineSpec, Method};
use blob::data::{generate_task, Shift, TaskSpec};
use blob::metrics::ece;
use blob::TrainConfig;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> blob::Result<()> {
    let config = TrainConfig::default();
    for shift in [Shift::None, Shift::Large] {
        let task = TaskSpec {
            shift,
            ..TaskSpec::default()
        };
        println!("shift {}", shift.name());
        for method in [Method::Mle, Method::Blob] {
            let (mut acc, mut e, mut nll) = (vec![], vec![], vec![]);
            for seed in 0..5 {
                let (train, test) = generate_task(&task, seed)?;
                let cfg = TrainConfig {
                    seed,
                    ..config.clone()
                };
                let model = train_baseline(&BaselineSpec::new(method), &train, &cfg)?;
                let probs = predict_baseline(&model, &test.columns(), 10, seed)?;
                let r = ece(&probs, &test.labels, 15)?;
                acc.push(r.acc);
                e.push(r.ece);
                nll.push(r.nll);
            }
            println!(
                "  {:<5} acc {:.4}  ece {:.4}  nll {:.4}",
                method.name(),
                median(acc),
                median(e),
                median(nll)
            );
        }
    }
    Ok(())
}
