//! A reduced benchmark suite from an inline config, written to a temporary
//! directory.
//!
//!     cargo run --release --example suite

use blob::bench::run_suite;
use blob::BenchConfig;

const CONFIG: &str = r#"
[train]
steps = 1000

[task]
generator = "two_moons_like"
shift = "small"

[suite]
methods = ["mle", "ensemble", "blob"]
seeds = [0, 1]
n_samples = [0, 10]
"#;

fn main() -> blob::Result<()> {
    let config = BenchConfig::parse(CONFIG)?;
    let outcome = run_suite(&config)?;
    for r in &outcome.results {
        let rep = r.report.as_ref().expect("cell succeeded");
        println!(
            "{:<9} seed {} N={:<2} acc {:.4} ece {:.4} nll {:.4}",
            r.method.name(),
            r.seed,
            r.n_inference_samples,
            rep.acc,
            rep.ece,
            rep.nll
        );
    }
    let dir = std::env::temp_dir().join("blob-suite-example");
    outcome.write_all(&dir)?;
    println!(
        "wrote results.csv, results.json and aggregate.csv to {}",
        dir.display()
    );
    Ok(())
}
