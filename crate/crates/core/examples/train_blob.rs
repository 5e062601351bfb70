//! Train BLoB adapters on a frozen two-layer backbone, watch the KL weight
//! and losses, then save and reload the model.
//!
//!     cargo run --release --example train_blob

use blob::bench::{eval_bundle, train_bundle, ModelBundle};
use blob::{BenchConfig, Method};

fn main() -> blob::Result<()> {
    let config = BenchConfig::default();
    let bundle = train_bundle(&config, Method::Blob, 0)?;
    let log = &bundle.model.logs[0];
    println!(
        "{:>5} {:>10} {:>10} {:>9} {:>6}",
        "step", "nll", "kl", "kl_w", "acc"
    );
    for rec in log.records.iter().step_by(250) {
        println!(
            "{:>5} {:>10.5} {:>10.3} {:>9.2e} {:>6.3}",
            rec.step, rec.likelihood_loss, rec.kl_value, rec.kl_weight, rec.train_acc
        );
    }

    let net = &bundle.model.members[0];
    for (i, layer) in net.layers.iter().enumerate() {
        let ad = &layer.adapter;
        let mean_abs = ad.mean_a.as_slice().iter().map(|v| v.abs()).sum::<f64>()
            / ad.mean_a.as_slice().len() as f64;
        let mean_std =
            ad.omega().as_slice().iter().sum::<f64>() / ad.mean_a.as_slice().len() as f64;
        println!(
            "layer {i}: {}x{} rank {}, mean |M| {mean_abs:.4}, mean std {mean_std:.4}",
            ad.m(),
            ad.n(),
            ad.rank()
        );
    }

    let mut bytes = Vec::new();
    bundle.write_to(&mut bytes)?;
    let reloaded = ModelBundle::read_from(&mut bytes.as_slice())?;
    for n in [0, 10] {
        let r = eval_bundle(&reloaded, &config.task, n)?;
        println!(
            "reloaded, N={n:>2}: acc {:.4} ece {:.4} nll {:.4}",
            r.acc, r.ece, r.nll
        );
    }
    Ok(())
}
