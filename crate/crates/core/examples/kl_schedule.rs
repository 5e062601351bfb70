//! KL weights of the reweighting schedules over the first steps of training.
//!
//!     cargo run --example kl_schedule

use blob::schedule::{pseudo_rescaled_len, AfterWarmup, KlMode};
use blob::KlSchedule;

fn main() -> blob::Result<()> {
    let (len, batch, gamma) = (500, 32, 8.0);
    println!(
        "{len} examples, gamma {gamma}: pseudo-rescaled length {}",
        pseudo_rescaled_len(len, gamma)
    );
    let modes = [KlMode::Uniform, KlMode::Blundell, KlMode::BlobAscending];
    let schedules: Vec<KlSchedule> = modes
        .iter()
        .map(|&m| KlSchedule::new(len, batch, m, gamma, true))
        .collect::<blob::Result<_>>()?;
    let hold = KlSchedule::new(len, batch, KlMode::BlobAscending, gamma, true)?
        .after_warmup(AfterWarmup::Hold);
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10}",
        "step", "uniform", "blundell", "ascending", "asc/hold"
    );
    for step in [1, 2, 10, 20, 38, 39, 40, 41, 78, 79, 80] {
        print!("{step:>5}");
        for s in &schedules {
            print!(" {:>10.3e}", s.kl_weight_at(step));
        }
        println!(" {:>10.3e}", hold.kl_weight_at(step));
    }
    Ok(())
}
