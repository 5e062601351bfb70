//! The `blob-bench` command line.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::baselines::Method;
use crate::bench::{
    eval_bundle, run_suite, train_bundle, verify_theorems, write_race, write_reliability_dat,
    ModelBundle,
};
use crate::config::BenchConfig;
use crate::data::{generate_task, Shift};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "blob-bench",
    version,
    about = "Bayesian low-rank adaptation benchmarks on synthetic tasks"
)]
pub struct Cli {
    /// TOML config; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "BLOB_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
    /// mle, map, mc_dropout, ensemble, bbb or blob.
    #[arg(long, global = true)]
    pub method: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Inference samples; 0 uses the posterior mean.
    #[arg(long, global = true)]
    pub n_samples: Option<usize>,
    /// none, small or large.
    #[arg(long, global = true)]
    pub shift: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method and save the model bundle and trajectory.
    Train,
    /// Evaluate a saved model bundle on its task's test split.
    Eval {
        /// Bundle path [default: <out-dir>/model.bin].
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run every method x seed x sample-count cell of the config.
    Suite,
    /// Scalar KL race between the square and softplus maps.
    Race {
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 500)]
        every: usize,
    },
    /// Numeric checks of the posterior and prior constructions.
    VerifyTheorems,
    /// Write the train and test splits as CSV.
    GenData,
}

/// What the process should exit with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

impl Cli {
    fn load_config(&self) -> Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(p) => BenchConfig::load(p)?,
            None => BenchConfig::default(),
        };
        if let Some(s) = &self.shift {
            cfg.task.shift = Shift::parse(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.suite.seeds = vec![seed];
            cfg.theorems.seed = seed;
        }
        if let Some(m) = &self.method {
            cfg.suite.methods = vec![Method::parse(m)?];
        }
        if let Some(n) = self.n_samples {
            cfg.suite.n_samples = vec![n];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn method(&self) -> Result<Method> {
        self.method
            .as_deref()
            .map_or(Ok(Method::Blob), Method::parse)
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = cli.load_config()?;
    let out = cli.out_dir.clone();
    fs::create_dir_all(&out)?;
    let start = Instant::now();
    let outcome = match &cli.command {
        Command::Train => {
            let method = cli.method()?;
            let bundle = train_bundle(&cfg, method, cfg.train.seed)?;
            bundle.save(&out.join("model.bin"))?;
            bundle.model.logs[0].write_csv(fs::File::create(out.join("trajectory.csv"))?)?;
            let last = bundle.model.logs[0].records.last();
            println!(
                "trained {} seed {} for {} steps; final likelihood {:.6}",
                method.name(),
                cfg.train.seed,
                cfg.train.steps,
                last.map_or(f64::NAN, |r| r.likelihood_loss)
            );
            Outcome::Success
        }
        Command::Eval { model } => {
            let path = model.clone().unwrap_or_else(|| out.join("model.bin"));
            let bundle = ModelBundle::load(&path)?;
            let mut task = bundle.config.task.clone();
            if let Some(s) = &cli.shift {
                task.shift = Shift::parse(s)?;
            }
            let n = cli
                .n_samples
                .unwrap_or(bundle.config.baselines.n_eval_samples);
            let report = eval_bundle(&bundle, &task, n)?;
            fs::write(out.join("report.json"), report.to_json()?)?;
            report.write_bins_csv(fs::File::create(out.join("reliability.csv"))?)?;
            write_reliability_dat(&report, &out.join("reliability.dat"))?;
            println!(
                "{} seed {} shift {} N={}: acc {:.4} ece {:.4} nll {:.4}{}",
                bundle.model.spec.kind.name(),
                bundle.seed,
                task.shift.name(),
                n,
                report.acc,
                report.ece,
                report.nll,
                if report.nll_clamped > 0 {
                    format!(" ({} probabilities clamped)", report.nll_clamped)
                } else {
                    String::new()
                }
            );
            Outcome::Success
        }
        Command::Suite => {
            let suite = run_suite(&cfg)?;
            suite.write_all(&out)?;
            for r in &suite.results {
                if let Some(e) = &r.error {
                    eprintln!("{} seed {} failed: {e}", r.method.name(), r.seed);
                }
            }
            println!(
                "{:<11} {:>3}  {:>17}  {:>17}  {:>17}",
                "method", "N", "acc", "ece", "nll"
            );
            for a in &suite.aggregate {
                println!(
                    "{:<11} {:>3}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}",
                    a.method.name(),
                    a.n_samples,
                    a.acc_mean,
                    a.acc_std,
                    a.ece_mean,
                    a.ece_std,
                    a.nll_mean,
                    a.nll_std
                );
            }
            println!("{} rows written to {}", suite.results.len(), out.display());
            if suite.any_failed() {
                Outcome::Failure
            } else {
                Outcome::Success
            }
        }
        Command::Race { steps, every } => {
            write_race(&out, *steps, *every)?;
            let check = crate::bench::check_race()?;
            println!(
                "{} {}",
                if check.passed { "PASS" } else { "FAIL" },
                check.detail
            );
            if check.passed {
                Outcome::Success
            } else {
                Outcome::Failure
            }
        }
        Command::VerifyTheorems => {
            let report = verify_theorems(&cfg.theorems)?;
            fs::write(
                out.join("theorems.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            for c in &report.checks {
                println!(
                    "{} {:<22} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if report.all_passed() {
                Outcome::Success
            } else {
                Outcome::Failure
            }
        }
        Command::GenData => {
            let (train, test) = generate_task(&cfg.task, cfg.train.seed)?;
            train.write_csv(fs::File::create(out.join("train.csv"))?)?;
            test.write_csv(fs::File::create(out.join("test.csv"))?)?;
            println!(
                "{} train / {} test examples, test shift: {}",
                train.len(),
                test.len(),
                cfg.task.shift_description()
            );
            Outcome::Success
        }
    };
    eprintln!("wall time {:.2}s", start.elapsed().as_secs_f64());
    Ok(outcome)
}
