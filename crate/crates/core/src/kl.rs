//! KL-divergence machinery.
//!
//! The posterior over `A` is a diagonal Gaussian with mean `M` and std
//! `Omega`; the prior is `N(0, sigma_p^2)` on every entry. The closed form
//! used for training is cheap. The full-weight routines materialize the
//! induced `mn`-dimensional Gaussians over `vec(W)` and are only used as an
//! independent check that the two KLs agree.

use serde::{Deserialize, Serialize};

use crate::adapter::VariationalAdapter;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sampling::SeededRng;

/// Largest `m * n` for which full-weight Gaussians are materialized.
pub const FULL_WEIGHT_GUARD: usize = 4096;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    sigma_p: f64,
}

impl PriorSpec {
    pub fn new(sigma_p: f64) -> Result<Self> {
        if !(sigma_p > 0.0) || !sigma_p.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "prior std must be positive, got {sigma_p}"
            )));
        }
        Ok(PriorSpec { sigma_p })
    }

    pub fn sigma_p(&self) -> f64 {
        self.sigma_p
    }
}

/// Both forms of the closed-form KL. `raw` omits the additive constant
/// `rn log sigma_p - rn/2`; `full` is the true divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlValue {
    pub full: f64,
    pub raw: f64,
}

fn check_std(omega: &Matrix) -> Result<()> {
    for i in 0..omega.rows() {
        for j in 0..omega.cols() {
            if omega[(i, j)] == 0.0 {
                return Err(Error::DegeneratePosterior { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// KL from the mean and std matrices directly.
pub fn kl_from_std(mean_a: &Matrix, omega: &Matrix, prior: PriorSpec) -> Result<KlValue> {
    if mean_a.shape() != omega.shape() {
        return Err(Error::DimensionMismatch {
            op: "kl",
            lhs: mean_a.shape(),
            rhs: omega.shape(),
        });
    }
    check_std(omega)?;
    let sp2 = prior.sigma_p * prior.sigma_p;
    let log_sum: f64 = omega.as_slice().iter().map(|w| w.abs().ln()).sum();
    let raw = (mean_a.frobenius_sq() + omega.frobenius_sq()) / (2.0 * sp2) - log_sum;
    let count = omega.as_slice().len() as f64;
    let full = raw + count * (prior.sigma_p.ln() - 0.5);
    Ok(KlValue { full, raw })
}

/// `KL[q(A) || P(A)]` with `Omega = G o G`, constants included.
pub fn kl_closed_form(mean_a: &Matrix, g: &Matrix, prior: PriorSpec) -> Result<f64> {
    Ok(kl_from_std(mean_a, &g.hadamard(g)?, prior)?.full)
}

/// The constant-free form: `(|M|^2 + |Omega|^2) / (2 sigma_p^2) - sum log Omega`.
pub fn kl_closed_form_raw(mean_a: &Matrix, g: &Matrix, prior: PriorSpec) -> Result<f64> {
    Ok(kl_from_std(mean_a, &g.hadamard(g)?, prior)?.raw)
}

/// Gradients of the closed-form KL with respect to `M` and `Omega`.
pub fn kl_grad_std(mean_a: &Matrix, omega: &Matrix, prior: PriorSpec) -> Result<(Matrix, Matrix)> {
    check_std(omega)?;
    let sp2 = prior.sigma_p * prior.sigma_p;
    let d_mean = mean_a.scale(1.0 / sp2);
    let d_omega = omega.map(|w| w / sp2 - 1.0 / w);
    Ok((d_mean, d_omega))
}

/// Sample-based estimate of `E_q[log q(A) - log P(A)]` and its standard error.
pub fn kl_monte_carlo(
    mean_a: &Matrix,
    g: &Matrix,
    prior: PriorSpec,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1000 samples, got {samples}"
        )));
    }
    let omega = g.hadamard(g)?;
    check_std(&omega)?;
    if mean_a.shape() != omega.shape() {
        return Err(Error::DimensionMismatch {
            op: "kl_monte_carlo",
            lhs: mean_a.shape(),
            rhs: omega.shape(),
        });
    }
    let sp = prior.sigma_p;
    let mut rng = SeededRng::new(seed);
    let log_norm_q: f64 = omega.as_slice().iter().map(|w| w.ln()).sum();
    let count = omega.as_slice().len() as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for (mu, w) in mean_a.as_slice().iter().zip(omega.as_slice()) {
            let eps = rng.gaussian();
            let a = mu + w * eps;
            // log q - log p, with the 2*pi terms cancelled
            log_ratio += -0.5 * eps * eps + 0.5 * (a / sp) * (a / sp);
        }
        log_ratio += count * sp.ln() - log_norm_q;
        sum += log_ratio;
        sum_sq += log_ratio * log_ratio;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Gaussian over `vec(W)`; the covariance may be singular.
#[derive(Debug, Clone, PartialEq)]
pub struct FullWeightGaussian {
    pub mu: Matrix,
    pub cov: Matrix,
}

impl FullWeightGaussian {
    pub fn dim(&self) -> usize {
        self.mu.rows()
    }

    /// Log-density of `N(mu, cov + ridge I)` at `x`.
    pub fn log_density(&self, x: &Matrix, ridge: f64) -> Result<f64> {
        let l = ridged(&self.cov, ridge).cholesky()?;
        let diff = x.sub(&self.mu)?;
        let sol = crate::matrix::cholesky_solve(&l, &diff)?;
        let quad: f64 = diff
            .as_slice()
            .iter()
            .zip(sol.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        Ok(-0.5 * (quad + crate::matrix::cholesky_logdet(&l) + self.dim() as f64 * LN_2PI))
    }
}

fn guard(m: usize, n: usize) -> Result<()> {
    let mn = m.saturating_mul(n);
    if mn > FULL_WEIGHT_GUARD {
        return Err(Error::SizeGuard(mn));
    }
    Ok(())
}

fn symmetrize(a: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

fn ridged(cov: &Matrix, lambda: f64) -> Matrix {
    let mut out = cov.clone();
    for i in 0..out.rows() {
        out[(i, i)] += lambda;
    }
    out
}

/// The variational distribution over the full weight induced by the adapter:
/// mean `vec(W0 + B M)` and covariance
/// `(I_n kron B) diag(vec(Omega)^2) (I_n kron B^T)`.
pub fn build_full_posterior(adapter: &VariationalAdapter) -> Result<FullWeightGaussian> {
    let (m, n) = (adapter.m(), adapter.n());
    guard(m, n)?;
    let mu = adapter.mean_weight()?.vec();
    let lift = Matrix::identity(n).kron(&adapter.b)?;
    let var = adapter.omega().vec().map(|w| w * w);
    let scaled = Matrix::from_fn(lift.rows(), lift.cols(), |i, j| lift[(i, j)] * var[(j, 0)]);
    let cov = symmetrize(&scaled.matmul(&lift.transpose())?);
    Ok(FullWeightGaussian { mu, cov })
}

/// The low-rank prior over the full weight: mean `vec(W0)` and covariance
/// `R~ R~^T` with `R~ = sigma_p (I_n kron R)`. Any `R` with
/// `R R^T = B B^T` gives the same covariance; passing `B` itself is the
/// canonical choice.
pub fn build_full_prior(
    w0: &Matrix,
    factor: &Matrix,
    prior: PriorSpec,
) -> Result<FullWeightGaussian> {
    let (m, n) = w0.shape();
    guard(m, n)?;
    if factor.rows() != m {
        return Err(Error::DimensionMismatch {
            op: "build_full_prior",
            lhs: w0.shape(),
            rhs: factor.shape(),
        });
    }
    let r_tilde = Matrix::identity(n).kron(factor)?.scale(prior.sigma_p);
    let cov = symmetrize(&r_tilde.matmul(&r_tilde.transpose())?);
    Ok(FullWeightGaussian { mu: w0.vec(), cov })
}

/// Gaussian KL between `N(mu_q, Sigma_q + lambda I)` and
/// `N(mu_p, Sigma_p + lambda I)`.
pub fn kl_full_weight_regularized(
    q: &FullWeightGaussian,
    p: &FullWeightGaussian,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be positive, got {lambda}"
        )));
    }
    let d = q.dim();
    if p.dim() != d || q.cov.shape() != (d, d) || p.cov.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            op: "kl_full_weight",
            lhs: q.cov.shape(),
            rhs: p.cov.shape(),
        });
    }
    let sq = ridged(&q.cov, lambda);
    let sp = ridged(&p.cov, lambda);
    let lq = sq.cholesky()?;
    let lp = sp.cholesky()?;
    let logdet_q = crate::matrix::cholesky_logdet(&lq);
    let logdet_p = crate::matrix::cholesky_logdet(&lp);
    let trace = crate::matrix::cholesky_solve(&lp, &sq)?.trace();
    let diff = q.mu.sub(&p.mu)?;
    let sol = crate::matrix::cholesky_solve(&lp, &diff)?;
    let quad: f64 = diff
        .as_slice()
        .iter()
        .zip(sol.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok(0.5 * (logdet_p - logdet_q - d as f64 + trace + quad))
}

/// Whether `b` has full column rank, judged by the smallest pivot of
/// `B^T B` relative to its largest diagonal entry.
pub fn full_column_rank(b: &Matrix, rel_tol: f64) -> bool {
    let gram = match b.transpose().matmul(b) {
        Ok(g) => g,
        Err(_) => return false,
    };
    let scale = (0..gram.rows()).fold(0.0f64, |acc, i| acc.max(gram[(i, i)]));
    if scale == 0.0 {
        return false;
    }
    match gram.cholesky() {
        Ok(l) => (0..l.rows()).all(|i| l[(i, i)] * l[(i, i)] > rel_tol * scale),
        Err(_) => false,
    }
}
