//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;

use blob::baselines::Method;
use blob::bench::{check_flipout, check_kl_equivalence, check_posterior_moments, check_race};
use blob::config::BenchConfig;
use blob::data::Shift;
use blob::kl::{full_column_rank, kl_closed_form, kl_monte_carlo};
use blob::metrics::{ece, nll};
use blob::net::{NetNoise, NoiseSpec, Sampling};
use blob::trainer::{build_net, elbo_with_noise};
use blob::{Matrix, ParamMap, PriorSpec, SeededRng, SmallNet, TrainConfig, VariationalAdapter};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Adapter with random shape inside the given bounds and a full-column-rank `B`.
fn random_adapter(
    rng: &mut SeededRng,
    max_m: usize,
    max_n: usize,
    max_r: usize,
) -> VariationalAdapter {
    loop {
        let m = 2 + rng.index(max_m - 1);
        let n = 2 + rng.index(max_n - 1);
        let r_cap = max_r.min(m.min(n) - 1);
        let r = 1 + rng.index(r_cap);
        let b = rng.gaussian_matrix(m, r);
        if !full_column_rank(&b, 1e-6) {
            continue;
        }
        return VariationalAdapter::new(
            rng.gaussian_matrix(m, n),
            b,
            rng.gaussian_matrix(r, n).scale(0.5),
            rng.uniform_matrix(r, n, 0.3, 0.9),
        )
        .unwrap();
    }
}

fn kl_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(101);
    let mut worst: f64 = 0.0;
    let mut all_monotone = true;
    for k in 0..20 {
        let ad = random_adapter(&mut rng, 6, 5, 3);
        let sigma_p = if k % 2 == 0 { 0.2 } else { 1.0 };
        let (_, gaps) = check_kl_equivalence(
            &ad,
            PriorSpec::new(sigma_p).unwrap(),
            &[1e-4, 1e-6, 1e-8],
            1e-4,
        )
        .unwrap();
        if gaps.len() != 3 {
            return outcome(false, format!("adapter {k}: rank check refused"));
        }
        all_monotone &= gaps.windows(2).all(|w| w[1] < w[0]);
        worst = worst.max(gaps[2]);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && all_monotone && secs < 10.0,
        format!("20 adapters, worst gap at 1e-8 {worst:.2e}, monotone {all_monotone}, {secs:.2}s"),
    )
}

fn posterior_moments() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(102);
    let ad = VariationalAdapter::new(
        rng.gaussian_matrix(4, 3),
        rng.uniform_matrix(4, 2, 0.5, 1.5),
        rng.gaussian_matrix(2, 3).scale(0.5),
        rng.uniform_matrix(2, 3, 0.3, 0.8),
    )
    .unwrap();
    let check = check_posterior_moments(&ad, 100_000, 7).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        check.passed && secs < 30.0,
        format!("{}, {secs:.2}s", check.detail),
    )
}

fn kl_monte_carlo_agreement() -> Outcome {
    let mut rng = SeededRng::new(103);
    let cases: Vec<(Matrix, Matrix, f64)> = (0..10)
        .map(|k| {
            let r = 1 + rng.index(3);
            let n = 2 + rng.index(4);
            let sigma_p = if k % 2 == 0 { 0.2 } else { 1.0 };
            (
                rng.gaussian_matrix(r, n).scale(0.5),
                rng.uniform_matrix(r, n, 0.2, 0.9),
                sigma_p,
            )
        })
        .collect();
    let z: Vec<f64> = cases
        .par_iter()
        .enumerate()
        .map(|(k, (mean, g, sp))| {
            let prior = PriorSpec::new(*sp).unwrap();
            let exact = kl_closed_form(mean, g, prior).unwrap();
            let (est, se) = kl_monte_carlo(mean, g, prior, 1_000_000, 500 + k as u64).unwrap();
            (est - exact).abs() / se
        })
        .collect();
    let worst = z.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 3.0,
        format!("10 configurations at 1e6 draws, worst |z| {worst:.2} (tol 3)"),
    )
}

fn tensor_mut(net: &mut SmallNet, layer: usize, which: usize) -> &mut Matrix {
    let ad = &mut net.layers[layer].adapter;
    match which {
        0 => &mut ad.b,
        1 => &mut ad.mean_a,
        _ => &mut ad.g,
    }
}

fn gradient_check() -> Outcome {
    let config = TrainConfig {
        hidden: 4,
        rank: 2,
        k_train_samples: 2,
        ..TrainConfig::default()
    };
    let variant = blob::Variant::blob();
    let kl_weight = 0.3;
    let mut rng = SeededRng::new(104);
    let mut worst: f64 = 0.0;
    for point in 0..10 {
        let mut net = build_net(6, 3, &config, ParamMap::Square, point).unwrap();
        for l in 0..net.layers.len() {
            for which in 0..3 {
                let t = tensor_mut(&mut net, l, which);
                let fresh = if which == 2 {
                    rng.uniform_matrix(t.rows(), t.cols(), 0.2, 0.8)
                } else {
                    rng.gaussian_matrix(t.rows(), t.cols()).scale(0.5)
                };
                *t = fresh;
            }
        }
        let x = rng.gaussian_matrix(6, 8);
        let labels: Vec<usize> = (0..8).map(|_| rng.index(3)).collect();
        let spec = NoiseSpec {
            sampling: Sampling::Flipout,
            ..NoiseSpec::MEAN
        };
        let noises: Vec<NetNoise> = (0..config.k_train_samples)
            .map(|_| NetNoise::sample(&net, 8, spec, &mut rng))
            .collect();
        let objective = |n: &SmallNet| {
            elbo_with_noise(n, &x, &labels, &noises, &config, &variant, kl_weight)
                .unwrap()
                .0
                .loss
        };
        let (_, grads) =
            elbo_with_noise(&net, &x, &labels, &noises, &config, &variant, kl_weight).unwrap();
        let total = grads.total(kl_weight).unwrap();
        let h = 1e-5;
        for (l, g) in total.iter().enumerate() {
            for which in 0..3 {
                let analytic = [&g.b, &g.mean_a, &g.g][which];
                let mut diff_sq = 0.0;
                let mut a_sq = 0.0;
                let mut fd_sq = 0.0;
                for idx in 0..analytic.as_slice().len() {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    tensor_mut(&mut plus, l, which).as_mut_slice()[idx] += h;
                    tensor_mut(&mut minus, l, which).as_mut_slice()[idx] -= h;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let a = analytic.as_slice()[idx];
                    diff_sq += (a - fd) * (a - fd);
                    a_sq += a * a;
                    fd_sq += fd * fd;
                }
                let rel = diff_sq.sqrt() / a_sq.sqrt().max(fd_sq.sqrt()).max(1e-300);
                worst = worst.max(rel);
            }
        }
    }
    outcome(
        worst <= 1e-5,
        format!("6-4-3 net, 10 points, worst per-tensor relative error {worst:.2e} (tol 1e-5)"),
    )
}

fn race() -> Outcome {
    let start = Instant::now();
    let check = check_race().unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        check.passed && secs < 5.0,
        format!("{}, {secs:.2}s", check.detail),
    )
}

fn flipout() -> Outcome {
    let mut rng = SeededRng::new(106);
    let ad = VariationalAdapter::new(
        rng.gaussian_matrix(8, 8),
        rng.gaussian_matrix(8, 2),
        rng.gaussian_matrix(2, 8).scale(0.5),
        rng.uniform_matrix(2, 8, 0.3, 0.8),
    )
    .unwrap();
    let check = check_flipout(&ad, 64, 10_000, 9).unwrap();
    outcome(check.passed, check.detail)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// (acc, ece, nll) medians over seeds 0..5 for MLE (N = 0) and BLoB (N = 10).
fn mle_vs_blob(shift: Shift) -> [[f64; 3]; 2] {
    let mut cfg = BenchConfig::default();
    cfg.task.shift = shift;
    cfg.suite.methods = vec![Method::Mle, Method::Blob];
    cfg.suite.seeds = (0..5).collect();
    cfg.suite.n_samples = vec![10];
    let suite = blob::bench::run_suite(&cfg).unwrap();
    assert!(!suite.any_failed(), "a suite cell failed");
    let mut out = [[0.0; 3]; 2];
    for (slot, method) in [Method::Mle, Method::Blob].into_iter().enumerate() {
        let reports: Vec<_> = suite
            .results
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.report.clone().unwrap())
            .collect();
        assert_eq!(reports.len(), 5);
        out[slot] = [
            median(&mut reports.iter().map(|r| r.acc).collect::<Vec<_>>()),
            median(&mut reports.iter().map(|r| r.ece).collect::<Vec<_>>()),
            median(&mut reports.iter().map(|r| r.nll).collect::<Vec<_>>()),
        ];
    }
    out
}

fn calibration() -> Outcome {
    let start = Instant::now();
    let [mle, blob] = mle_vs_blob(Shift::None);
    let secs = start.elapsed().as_secs_f64();
    let passed =
        blob[1] < mle[1] && blob[2] < mle[2] && (blob[0] - mle[0]).abs() <= 0.03 && secs < 300.0;
    outcome(
        passed,
        format!(
            "medians MLE acc {:.4} ece {:.4} nll {:.4}; BLoB acc {:.4} ece {:.4} nll {:.4}; {secs:.1}s",
            mle[0], mle[1], mle[2], blob[0], blob[1], blob[2]
        ),
    )
}

fn shift() -> Outcome {
    let [mle, blob] = mle_vs_blob(Shift::Large);
    outcome(
        blob[2] <= mle[2],
        format!(
            "large shift median NLL: MLE {:.4}, BLoB {:.4}",
            mle[2], blob[2]
        ),
    )
}

fn metric_fidelity() -> Outcome {
    let conf = [0.6, 0.6, 0.9, 0.9];
    let probs = Matrix::from_fn(4, 2, |i, j| if j == 0 { conf[i] } else { 1.0 - conf[i] });
    let report = ece(&probs, &[0, 1, 0, 0], 15).unwrap();
    let mut nll_gap: f64 = 0.0;
    for c in [2usize, 3, 5, 10] {
        let uniform = Matrix::from_fn(6, c, |_, _| 1.0 / c as f64);
        let labels: Vec<usize> = (0..6).map(|i| i % c).collect();
        let (mean, _, _) = nll(&uniform, &labels).unwrap();
        nll_gap = nll_gap.max((mean - (c as f64).ln()).abs());
    }
    outcome(
        (report.ece - 0.10).abs() <= 1e-12 && nll_gap <= 1e-12,
        format!(
            "hand ECE {:.17}, uniform NLL max |gap to log C| {nll_gap:.1e}",
            report.ece
        ),
    )
}

fn run_cli(out: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_blob-bench"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("BLOB_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited {:?}: {}",
            status.status.code(),
            String::from_utf8_lossy(&status.stderr)
        ))
    }
}

fn determinism() -> Outcome {
    let commands: [&[&str]; 7] = [
        &["--seed", "4", "gen-data"],
        &["--seed", "4", "--method", "blob", "train"],
        &["--shift", "large", "eval"],
        &["--method", "bbb", "--seed", "1", "train"],
        &["suite"],
        &["race"],
        &["verify-theorems"],
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut compared = 0;
    for args in commands {
        for d in &dirs {
            if let Err(e) = run_cli(d.path(), args) {
                return outcome(false, e);
            }
        }
        let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
            let b = std::fs::read(dirs[1].path().join(&name)).unwrap_or_default();
            if a != b {
                return outcome(false, format!("{args:?}: {name:?} differs between reruns"));
            }
            compared += 1;
        }
    }
    outcome(
        true,
        format!("7 commands run twice, {compared} output files byte-identical"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("kl equivalence", kl_equivalence),
        ("posterior moments", posterior_moments),
        ("kl monte carlo", kl_monte_carlo_agreement),
        ("gradient check", gradient_check),
        ("parameterization race", race),
        ("flipout efficiency", flipout),
        ("calibration", calibration),
        ("shift", shift),
        ("metric fidelity", metric_fidelity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {:<22} {}",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            name,
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
