//! Experiment orchestration: method suites, the theorem check battery,
//! the parameterization race, and model bundles.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{FlipoutMasks, VariationalAdapter};
use crate::baselines::{predict_baseline, train_baseline, BaselineSpec, Method, TrainedModel};
use crate::config::{BenchConfig, TheoremConfig};
use crate::data::{csv_err, generate_task, Dataset, TaskSpec};
use crate::error::{Error, Result};
use crate::kl::{
    build_full_posterior, build_full_prior, full_column_rank, kl_closed_form,
    kl_full_weight_regularized, PriorSpec, FULL_WEIGHT_GUARD,
};
use crate::matrix::Matrix;
use crate::metrics::{ece, CalibrationReport, DEFAULT_BINS};
use crate::net::SmallNet;
use crate::param_map::ParamMap;
use crate::sampling::SeededRng;
use crate::trainer::TrainConfig;

/// One evaluated (method, seed, sample count) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub task: String,
    pub shift: String,
    pub n_inference_samples: usize,
    pub report: Option<CalibrationReport>,
    pub error: Option<String>,
    /// Seconds spent training and evaluating; not serialized so outputs are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Serialize)]
struct ResultRow<'a> {
    method: &'a str,
    seed: u64,
    task: &'a str,
    shift: &'a str,
    n_samples: usize,
    acc: Option<f64>,
    ece: Option<f64>,
    nll: Option<f64>,
    nll_clamped: Option<usize>,
    status: &'a str,
}

/// Mean and sample standard deviation over seeds for one (method, N) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub n_samples: usize,
    pub n_seeds: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub nll_mean: f64,
    pub nll_std: f64,
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub results: Vec<RunResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl SuiteOutcome {
    pub fn any_failed(&self) -> bool {
        self.results.iter().any(RunResult::failed)
    }

    pub fn write_results_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.results {
            let rep = r.report.as_ref();
            out.serialize(ResultRow {
                method: r.method.name(),
                seed: r.seed,
                task: &r.task,
                shift: &r.shift,
                n_samples: r.n_inference_samples,
                acc: rep.map(|x| x.acc),
                ece: rep.map(|x| x.ece),
                nll: rep.map(|x| x.nll),
                nll_clamped: rep.map(|x| x.nll_clamped),
                status: if r.failed() { "failed" } else { "ok" },
            })
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_aggregate_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.aggregate {
            out.serialize(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `results.csv`, `results.json` and `aggregate.csv` to `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_results_csv(fs::File::create(dir.join("results.csv"))?)?;
        fs::write(
            dir.join("results.json"),
            serde_json::to_string_pretty(&self.results)?,
        )?;
        self.write_aggregate_csv(fs::File::create(dir.join("aggregate.csv"))?)?;
        Ok(())
    }
}

fn aggregate(results: &[RunResult], methods: &[Method], n_values: &[usize]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &method in methods {
        let ns: &[usize] = if method.is_sampling() { n_values } else { &[0] };
        for &n in ns {
            let reports: Vec<&CalibrationReport> = results
                .iter()
                .filter(|r| r.method == method && r.n_inference_samples == n)
                .filter_map(|r| r.report.as_ref())
                .collect();
            if reports.is_empty() {
                continue;
            }
            let col = |f: fn(&CalibrationReport) -> f64| {
                mean_std(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let (acc_mean, acc_std) = col(|r| r.acc);
            let (ece_mean, ece_std) = col(|r| r.ece);
            let (nll_mean, nll_std) = col(|r| r.nll);
            rows.push(AggregateRow {
                method,
                n_samples: n,
                n_seeds: reports.len(),
                acc_mean,
                acc_std,
                ece_mean,
                ece_std,
                nll_mean,
                nll_std,
            });
        }
    }
    rows
}

fn task_label(task: &TaskSpec) -> String {
    task.generator.name().to_string()
}

fn evaluate(
    model: &TrainedModel,
    test: &Dataset,
    n: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    let probs = predict_baseline(model, &test.columns(), n, seed)?;
    ece(&probs, &test.labels, DEFAULT_BINS)
}

/// Trains one (method, seed) cell and evaluates it at each requested sample
/// count (once for deterministic methods).
pub fn run_cell(
    config: &BenchConfig,
    method: Method,
    seed: u64,
    n_values: &[usize],
) -> Vec<RunResult> {
    let start = Instant::now();
    let ns: Vec<usize> = if method.is_sampling() {
        n_values.to_vec()
    } else {
        vec![0]
    };
    let task = &config.task;
    let outcome = (|| -> Result<Vec<CalibrationReport>> {
        let (train, test) = generate_task(task, seed)?;
        let cfg = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let model = train_baseline(&config.spec_for(method), &train, &cfg)?;
        ns.iter()
            .map(|&n| evaluate(&model, &test, n, seed))
            .collect()
    })();
    let wall = start.elapsed().as_secs_f64();
    let mk = |n: usize, report: Option<CalibrationReport>, error: Option<String>| RunResult {
        method,
        seed,
        task: task_label(task),
        shift: task.shift.name().to_string(),
        n_inference_samples: n,
        report,
        error,
        wall_time: wall,
    };
    match outcome {
        Ok(reports) => ns
            .iter()
            .zip(reports)
            .map(|(&n, r)| mk(n, Some(r), None))
            .collect(),
        Err(e) => ns
            .iter()
            .map(|&n| mk(n, None, Some(e.to_string())))
            .collect(),
    }
}

/// Every (method, seed) cell of the suite, run in parallel. Failed cells are
/// recorded and the suite continues. Result order is methods, then seeds,
/// then sample counts, independent of scheduling.
pub fn run_suite(config: &BenchConfig) -> Result<SuiteOutcome> {
    config.validate()?;
    let cells: Vec<(Method, u64)> = config
        .suite
        .methods
        .iter()
        .flat_map(|&m| config.suite.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results: Vec<RunResult> = cells
        .par_iter()
        .map(|&(m, s)| run_cell(config, m, s, &config.suite.n_samples))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let aggregate = aggregate(&results, &config.suite.methods, &config.suite.n_samples);
    Ok(SuiteOutcome { results, aggregate })
}

/// Outcome of one theorem check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub checks: Vec<Check>,
}

impl TheoremReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_adapter(
    rng: &mut SeededRng,
    m: usize,
    n: usize,
    r: usize,
    positive_b: bool,
) -> Result<VariationalAdapter> {
    let b = if positive_b {
        rng.uniform_matrix(m, r, 0.5, 1.5)
    } else {
        rng.gaussian_matrix(m, r)
    };
    VariationalAdapter::new(
        rng.gaussian_matrix(m, n),
        b,
        rng.gaussian_matrix(r, n).scale(0.5),
        rng.uniform_matrix(r, n, 0.3, 0.8),
    )
}

/// Empirical mean and covariance of `samples` draws of `vec(W0 + B A)`
/// against the closed-form posterior. Means must agree within 3 standard
/// errors; covariance entries larger than 1e-6 within 5% relative.
pub fn check_posterior_moments(
    adapter: &VariationalAdapter,
    samples: usize,
    seed: u64,
) -> Result<Check> {
    let q = build_full_posterior(adapter)?;
    let d = q.dim();
    let (r, n) = (adapter.rank(), adapter.n());
    let mut rng = SeededRng::new(seed);
    let mut sum = vec![0.0; d];
    let mut outer = vec![0.0; d * d];
    let mut draws = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a = adapter.sample_a(&rng.gaussian_matrix(r, n))?;
        let w = adapter.w0().add(&adapter.b.matmul(&a)?)?.vec().into_vec();
        for i in 0..d {
            sum[i] += w[i];
        }
        draws.push(w);
    }
    let ns = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / ns).collect();
    for w in &draws {
        for i in 0..d {
            let di = w[i] - mean[i];
            for j in i..d {
                outer[i * d + j] += di * (w[j] - mean[j]);
            }
        }
    }
    let mut worst_mean: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for i in 0..d {
        let se = (q.cov[(i, i)] / ns).sqrt();
        let gap = (mean[i] - q.mu[(i, 0)]).abs();
        // a point-mass coordinate only has summation rounding to explain
        let z = if se > 0.0 {
            gap / se
        } else if gap <= 1e-12 * (1.0 + q.mu[(i, 0)].abs()) {
            0.0
        } else {
            f64::INFINITY
        };
        worst_mean = worst_mean.max(z);
        for j in i..d {
            let exact = q.cov[(i, j)];
            if exact.abs() > 1e-6 {
                let emp = outer[i * d + j] / (ns - 1.0);
                worst_cov = worst_cov.max((emp - exact).abs() / exact.abs());
            }
        }
    }
    Ok(Check::new(
        "posterior_moments",
        worst_mean <= 3.0 && worst_cov <= 0.05,
        format!("max mean z {worst_mean:.3} (tol 3), max cov rel err {worst_cov:.4} (tol 0.05), {samples} draws"),
    ))
}

/// The regularized full-weight KL approaches the closed form as the ridge
/// shrinks: the gap must fall monotonically over `lambdas` and end within
/// `tol` relative. Returns the gaps.
pub fn check_kl_equivalence(
    adapter: &VariationalAdapter,
    prior: PriorSpec,
    lambdas: &[f64],
    tol: f64,
) -> Result<(Check, Vec<f64>)> {
    let name = "kl_equivalence";
    if !full_column_rank(&adapter.b, 1e-10) {
        return Ok((
            Check::new(
                name,
                false,
                "rank precondition violated: B lacks full column rank".into(),
            ),
            vec![],
        ));
    }
    let closed = kl_closed_form(&adapter.mean_a, &adapter.g, prior)?;
    let q = build_full_posterior(adapter)?;
    let p = build_full_prior(adapter.w0(), &adapter.b, prior)?;
    let mut gaps = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let full = kl_full_weight_regularized(&q, &p, lam)?;
        gaps.push((full - closed).abs() / closed.abs());
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let last = *gaps.last().unwrap_or(&f64::INFINITY);
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
    Ok((
        Check::new(
            name,
            monotone && last <= tol,
            format!(
                "closed form {closed:.6}, relative gaps [{}], monotone {monotone}, tol {tol:e}",
                shown.join(", ")
            ),
        ),
        gaps,
    ))
}

/// Modified Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut SeededRng, r: usize) -> Matrix {
    let mut q = rng.gaussian_matrix(r, r);
    for j in 0..r {
        for k in 0..j {
            let dot: f64 = (0..r).map(|i| q[(i, j)] * q[(i, k)]).sum();
            for i in 0..r {
                let v = q[(i, k)];
                q.as_mut_slice()[i * r + j] -= dot * v;
            }
        }
        let norm = (0..r).map(|i| q[(i, j)].powi(2)).sum::<f64>().sqrt();
        for i in 0..r {
            q.as_mut_slice()[i * r + j] /= norm;
        }
    }
    q
}

/// Replacing the prior factor `R = B` by `B Q` for orthogonal `Q` leaves the
/// KL unchanged.
pub fn check_r_choice(adapter: &VariationalAdapter, prior: PriorSpec, seed: u64) -> Result<Check> {
    let name = "r_choice_independence";
    if !full_column_rank(&adapter.b, 1e-10) {
        return Ok(Check::new(
            name,
            false,
            "rank precondition violated: B lacks full column rank".into(),
        ));
    }
    let mut rng = SeededRng::new(seed);
    let q = build_full_posterior(adapter)?;
    let lam = 1e-8;
    let base =
        kl_full_weight_regularized(&q, &build_full_prior(adapter.w0(), &adapter.b, prior)?, lam)?;
    let rotated_factor = adapter
        .b
        .matmul(&random_orthogonal(&mut rng, adapter.rank()))?;
    let rotated = kl_full_weight_regularized(
        &q,
        &build_full_prior(adapter.w0(), &rotated_factor, prior)?,
        lam,
    )?;
    let rel = (rotated - base).abs() / base.abs();
    Ok(Check::new(
        name,
        rel <= 1e-6,
        format!(
            "KL with R = B: {base:.6}, with R = BQ: {rotated:.6}, rel diff {rel:.2e} (tol 1e-6)"
        ),
    ))
}

/// Statistics of adapter output perturbations across a batch of identical
/// inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipoutStats {
    pub flipout_mean_abs_corr: f64,
    pub shared_mean_abs_corr: f64,
    /// Largest relative gap between the flipout and naive per-unit variances.
    pub variance_rel_gap: f64,
}

fn mean_abs_cross_corr(perturbations: &[Matrix]) -> f64 {
    let (m, b) = perturbations[0].shape();
    let ns = perturbations.len() as f64;
    let mut total = 0.0;
    let mut pairs = 0.0;
    for k in 0..m {
        let mut mean = vec![0.0; b];
        for p in perturbations {
            for i in 0..b {
                mean[i] += p[(k, i)] / ns;
            }
        }
        let mut cov = vec![0.0; b * b];
        for p in perturbations {
            let row = p.row(k);
            for i in 0..b {
                let di = row[i] - mean[i];
                for j in i..b {
                    cov[i * b + j] += di * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..b {
            for j in i + 1..b {
                total += (cov[i * b + j] / (cov[i * b + i] * cov[j * b + j]).sqrt()).abs();
                pairs += 1.0;
            }
        }
    }
    total / pairs
}

fn pooled_unit_variance(perturbations: &[Matrix]) -> Vec<f64> {
    let (m, b) = perturbations[0].shape();
    let count = (perturbations.len() * b) as f64;
    (0..m)
        .map(|k| {
            let vals = perturbations.iter().flat_map(|p| p.row(k).iter().copied());
            let (s, s2) = vals.fold((0.0, 0.0), |(s, s2), v| (s + v, s2 + v * v));
            let mean = s / count;
            s2 / count - mean * mean
        })
        .collect()
}

/// Compares flipout, shared-noise and naive per-example sampling on a batch
/// of `batch` copies of one input.
pub fn flipout_stats(
    adapter: &VariationalAdapter,
    batch: usize,
    draws: usize,
    seed: u64,
) -> Result<FlipoutStats> {
    let mut rng = SeededRng::new(seed);
    let (m, n, r) = (adapter.m(), adapter.n(), adapter.rank());
    let column = rng.gaussian_matrix(n, 1);
    let h = Matrix::from_fn(n, batch, |i, _| column[(i, 0)]);
    let base = adapter.forward_mean(&h)?;
    let base1 = adapter.forward_mean(&column)?;
    let mut flip = Vec::with_capacity(draws);
    let mut shared = Vec::with_capacity(draws);
    let mut naive = Vec::with_capacity(draws);
    for _ in 0..draws {
        let masks = FlipoutMasks::sample(&mut rng, n, batch, r);
        flip.push(adapter.forward_flipout(&h, &masks)?.sub(&base)?);
        let e = rng.gaussian_matrix(r, n);
        shared.push(adapter.forward_naive_shared(&h, &e)?.sub(&base)?);
        let mut own = Matrix::zeros(m, batch);
        for i in 0..batch {
            let e = rng.gaussian_matrix(r, n);
            let z = adapter.forward_naive_shared(&column, &e)?.sub(&base1)?;
            for k in 0..m {
                own.as_mut_slice()[k * batch + i] = z[(k, 0)];
            }
        }
        naive.push(own);
    }
    let vf = pooled_unit_variance(&flip);
    let vn = pooled_unit_variance(&naive);
    let variance_rel_gap = vf
        .iter()
        .zip(&vn)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    Ok(FlipoutStats {
        flipout_mean_abs_corr: mean_abs_cross_corr(&flip),
        shared_mean_abs_corr: mean_abs_cross_corr(&shared),
        variance_rel_gap,
    })
}

pub fn check_flipout(
    adapter: &VariationalAdapter,
    batch: usize,
    draws: usize,
    seed: u64,
) -> Result<Check> {
    let s = flipout_stats(adapter, batch, draws, seed)?;
    Ok(Check::new(
        "flipout_moments",
        s.flipout_mean_abs_corr <= 0.05 && s.shared_mean_abs_corr >= 0.5 && s.variance_rel_gap <= 0.05,
        format!(
            "mean |corr| flipout {:.4} (tol 0.05), shared {:.4} (min 0.5), variance gap {:.4} (tol 0.05)",
            s.flipout_mean_abs_corr, s.shared_mean_abs_corr, s.variance_rel_gap
        ),
    ))
}

/// Step counts of the scalar KL race for both maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaceResult {
    pub square_steps: usize,
    pub softplus_steps: usize,
    pub square_cap: usize,
    pub softplus_cap: usize,
}

pub const RACE_SIGMA_P: f64 = 1.0;
pub const RACE_SIGMA_Q0: f64 = 0.01;
pub const RACE_LR: f64 = 1e-4;
pub const RACE_TARGET: f64 = 0.9;

pub fn race() -> Result<RaceResult> {
    let (square_cap, softplus_cap) = (10_000, 50_000);
    Ok(RaceResult {
        square_steps: ParamMap::Square.convergence_race(
            RACE_SIGMA_P,
            RACE_SIGMA_Q0,
            RACE_LR,
            RACE_TARGET,
            square_cap,
        )?,
        softplus_steps: ParamMap::Softplus.convergence_race(
            RACE_SIGMA_P,
            RACE_SIGMA_Q0,
            RACE_LR,
            RACE_TARGET,
            softplus_cap,
        )?,
        square_cap,
        softplus_cap,
    })
}

pub fn check_race() -> Result<Check> {
    let r = race()?;
    Ok(Check::new(
        "parameterization_race",
        r.square_steps < r.square_cap && r.softplus_steps >= r.softplus_cap,
        format!(
            "square reached {RACE_TARGET} in {} steps (cap {}), softplus {} (cap {})",
            r.square_steps, r.square_cap, r.softplus_steps, r.softplus_cap
        ),
    ))
}

/// Writes `race.csv` (`step,square,softplus`) and one gnuplot two-column
/// file per map, sampling every `every` steps up to `steps`.
pub fn write_race(dir: &Path, steps: usize, every: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let sq =
        ParamMap::Square.race_trajectory(RACE_SIGMA_P, RACE_SIGMA_Q0, RACE_LR, steps, every)?;
    let sp =
        ParamMap::Softplus.race_trajectory(RACE_SIGMA_P, RACE_SIGMA_Q0, RACE_LR, steps, every)?;
    let mut out = csv::Writer::from_path(dir.join("race.csv")).map_err(csv_err)?;
    out.write_record(["step", "square", "softplus"])
        .map_err(csv_err)?;
    for (a, b) in sq.iter().zip(&sp) {
        out.write_record([a.0.to_string(), a.1.to_string(), b.1.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    for (name, traj) in [("square", &sq), ("softplus", &sp)] {
        let mut f = fs::File::create(dir.join(format!("race_{name}.dat")))?;
        writeln!(f, "# step sigma_q ({name})")?;
        for (s, v) in traj {
            writeln!(f, "{s} {v}")?;
        }
    }
    Ok(())
}

/// The full battery at the configured dimensions.
pub fn verify_theorems(cfg: &TheoremConfig) -> Result<TheoremReport> {
    let mut checks = Vec::new();
    let (m, n, r) = (cfg.m, cfg.n, cfg.r);
    if m.checked_mul(n).is_none_or(|mn| mn > FULL_WEIGHT_GUARD) {
        return Err(Error::SizeGuard(m.saturating_mul(n)));
    }
    let prior = PriorSpec::new(cfg.sigma_p)?;
    let mut rng = SeededRng::with_stream(cfg.seed, 21);
    let mut adapter = random_adapter(&mut rng, m, n, r, true)?;
    if cfg.zero_b {
        adapter.b = Matrix::zeros(m, r);
    }
    checks.push(check_posterior_moments(
        &adapter,
        cfg.moment_samples,
        cfg.seed,
    )?);
    checks.push(check_kl_equivalence(&adapter, prior, &[1e-4, 1e-6, 1e-8], 1e-4)?.0);
    checks.push(check_r_choice(&adapter, prior, cfg.seed)?);
    let flip_adapter = random_adapter(&mut rng, m, n, r, false)?;
    checks.push(check_flipout(
        &flip_adapter,
        cfg.flipout_batch,
        cfg.flipout_draws,
        cfg.seed,
    )?);
    checks.push(check_race()?);
    Ok(TheoremReport { checks })
}

const BUNDLE_MAGIC: &[u8; 8] = b"BLOBMODL";
const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleHeader {
    spec: BaselineSpec,
    method: Method,
    config: BenchConfig,
    seed: u64,
}

/// A trained model plus everything needed to regenerate its data.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: TrainedModel,
    pub config: BenchConfig,
    pub seed: u64,
}

impl ModelBundle {
    /// Layout: magic, `u32` version, `u64` header length, JSON header,
    /// `u64` member count, then each network's binary record.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&BundleHeader {
            spec: self.model.spec.clone(),
            method: self.model.spec.kind,
            config: self.config.clone(),
            seed: self.seed,
        })?;
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&BUNDLE_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.model.members.len() as u64).to_le_bytes())?;
        for net in &self.model.members {
            net.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Format("not a model bundle".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        if u32::from_le_bytes(v) != BUNDLE_VERSION {
            return Err(Error::Format("unsupported bundle version".into()));
        }
        let len = read_u64(r)?;
        if len > 1 << 24 {
            return Err(Error::Format("bundle header too large".into()));
        }
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header)?;
        let header: BundleHeader = serde_json::from_slice(&header)?;
        let count = read_u64(r)?;
        if count == 0 || count > 1024 {
            return Err(Error::Format(format!("implausible member count {count}")));
        }
        let members = (0..count)
            .map(|_| SmallNet::read_from(r))
            .collect::<Result<Vec<_>>>()?;
        let spec = BaselineSpec {
            kind: header.method,
            schedule: header.config.schedule,
            ..header.spec
        };
        Ok(ModelBundle {
            model: TrainedModel {
                spec,
                members,
                logs: Vec::new(),
            },
            config: header.config,
            seed: header.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(fs::File::open(path)?))
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Trains `method` on the config's task at `seed`.
pub fn train_bundle(config: &BenchConfig, method: Method, seed: u64) -> Result<ModelBundle> {
    config.validate()?;
    let (train, _) = generate_task(&config.task, seed)?;
    let cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let model = train_baseline(&config.spec_for(method), &train, &cfg)?;
    Ok(ModelBundle {
        model,
        config: config.clone(),
        seed,
    })
}

/// Evaluates a bundle on the test split of its task, optionally under a
/// different shift.
pub fn eval_bundle(
    bundle: &ModelBundle,
    task: &TaskSpec,
    n_samples: usize,
) -> Result<CalibrationReport> {
    let (_, test) = generate_task(task, bundle.seed)?;
    evaluate(&bundle.model, &test, n_samples, bundle.seed)
}

/// Gnuplot two-column reliability curve: mean confidence, mean accuracy of
/// the nonempty bins.
pub fn write_reliability_dat(report: &CalibrationReport, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# mean_conf mean_acc")?;
    for b in report.bins.iter().filter(|b| b.count > 0) {
        writeln!(f, "{} {}", b.mean_conf, b.mean_acc)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_matches_hand_value() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn orthogonal_factor() {
        let q = random_orthogonal(&mut SeededRng::new(1), 4);
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(qtq.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn default_battery_passes() {
        let cfg = TheoremConfig {
            moment_samples: 20_000,
            flipout_draws: 2_000,
            flipout_batch: 16,
            ..TheoremConfig::default()
        };
        let report = verify_theorems(&cfg).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn zero_b_reports_rank_violation() {
        let cfg = TheoremConfig {
            zero_b: true,
            moment_samples: 2_000,
            flipout_draws: 500,
            flipout_batch: 8,
            ..TheoremConfig::default()
        };
        let report = verify_theorems(&cfg).unwrap();
        let kl = report
            .checks
            .iter()
            .find(|c| c.name == "kl_equivalence")
            .unwrap();
        assert!(!kl.passed);
        assert!(kl.detail.contains("rank precondition violated"));
        assert!(!report.all_passed());
    }

    #[test]
    fn oversized_dims_rejected() {
        let cfg = TheoremConfig {
            m: 65,
            n: 64,
            r: 2,
            ..TheoremConfig::default()
        };
        assert!(matches!(verify_theorems(&cfg), Err(Error::SizeGuard(4160))));
    }

    #[test]
    fn bundle_round_trip_and_bad_magic() {
        let mut config = BenchConfig::default();
        config.train.steps = 5;
        config.task.n_train = 40;
        config.task.n_test = 30;
        let bundle = train_bundle(&config, Method::Ensemble, 2).unwrap();
        let mut buf = Vec::new();
        bundle.write_to(&mut buf).unwrap();
        let back = ModelBundle::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.model.members, bundle.model.members);
        assert_eq!(back.model.spec, bundle.model.spec);
        let a = eval_bundle(&bundle, &config.task, 0).unwrap();
        let b = eval_bundle(&back, &config.task, 0).unwrap();
        assert_eq!(a, b);
        buf[0] = b'X';
        assert!(ModelBundle::read_from(&mut buf.as_slice()).is_err());
    }
}
