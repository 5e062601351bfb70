//! The numeric checks behind the posterior and KL constructions, at default
//! and larger sizes, plus the rank-deficient case the KL check refuses.
//!
//!     cargo run --release --example verify_theorems

use blob::bench::verify_theorems;
use blob::config::TheoremConfig;

fn main() -> blob::Result<()> {
    let configs = [
        TheoremConfig::default(),
        TheoremConfig {
            m: 6,
            n: 5,
            r: 3,
            sigma_p: 1.0,
            ..TheoremConfig::default()
        },
        TheoremConfig {
            zero_b: true,
            ..TheoremConfig::default()
        },
    ];
    for cfg in configs {
        println!(
            "m {} n {} r {} sigma_p {} zero_b {}",
            cfg.m, cfg.n, cfg.r, cfg.sigma_p, cfg.zero_b
        );
        for c in verify_theorems(&cfg)?.checks {
            println!(
                "  {} {:<22} {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
    }
    Ok(())
}
