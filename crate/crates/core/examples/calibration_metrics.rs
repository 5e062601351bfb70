//! Accuracy, ECE and NLL on a handful of predictions, with the reliability
//! bins that make up the ECE.
//!
//!     cargo run --example calibration_metrics

use blob::metrics::{ece, nll};
use blob::Matrix;

fn main() -> blob::Result<()> {
    let conf = [0.6, 0.6, 0.9, 0.9];
    let probs = Matrix::from_fn(4, 2, |i, j| if j == 0 { conf[i] } else { 1.0 - conf[i] });
    let labels = [0, 1, 0, 0];
    let report = ece(&probs, &labels, 15)?;
    println!(
        "acc {} ece {:.4} nll {:.4}",
        report.acc, report.ece, report.nll
    );
    for b in report.bins.iter().filter(|b| b.count > 0) {
        println!(
            "  bin ({:.3}, {:.3}]: {} examples, conf {:.2}, acc {:.2}, contributes {:.3}",
            b.lower,
            b.upper,
            b.count,
            b.mean_conf,
            b.mean_acc,
            b.contribution(report.n)
        );
    }

    let uniform = Matrix::from_fn(3, 4, |_, _| 0.25);
    let (mean, _, _) = nll(&uniform, &[0, 1, 2])?;
    println!(
        "uniform over 4 classes: nll {mean:.6} (log 4 = {:.6})",
        4f64.ln()
    );

    let certain_wrong = Matrix::new(1, 2, vec![1.0, 0.0])?;
    let (mean, _, clamped) = nll(&certain_wrong, &[1])?;
    println!("certain and wrong: nll {mean:.3}, {clamped} probability clamped");
    Ok(())
}
