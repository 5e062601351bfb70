//! Standard-deviation parameterizations: `sigma = rho^2` and
//! `sigma = log(1 + exp(rho))`.
//!
//! The square map gives KL gradients of order `1/rho` when the posterior
//! std is small, while softplus saturates at a gradient of about `-1`. The
//! convergence race below runs plain gradient descent on the scalar KL
//! alone to make the difference measurable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMap {
    Square,
    Softplus,
}

impl ParamMap {
    pub fn name(self) -> &'static str {
        match self {
            ParamMap::Square => "square",
            ParamMap::Softplus => "softplus",
        }
    }

    #[inline]
    pub fn apply(self, rho: f64) -> f64 {
        match self {
            ParamMap::Square => rho * rho,
            ParamMap::Softplus => softplus(rho),
        }
    }

    /// `d sigma / d rho`.
    #[inline]
    pub fn derivative(self, rho: f64) -> f64 {
        match self {
            ParamMap::Square => 2.0 * rho,
            ParamMap::Softplus => sigmoid(rho),
        }
    }

    /// The parameter value that maps to `sigma` (positive root for the square map).
    pub fn inverse(self, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(match self {
            ParamMap::Square => sigma.sqrt(),
            // log(exp(s) - 1), stable for large s
            ParamMap::Softplus => {
                if sigma > 30.0 {
                    sigma + (-(-sigma).exp()).ln_1p()
                } else {
                    sigma.exp_m1().ln()
                }
            }
        })
    }

    /// Derivative of `KL(N(0, sigma(rho)^2) || N(0, sigma_p^2))` with respect to `rho`.
    pub fn kl_grad_rho(self, rho: f64, sigma_p: f64) -> Result<f64> {
        if self == ParamMap::Square && rho == 0.0 {
            return Err(Error::DegeneratePosterior { row: 0, col: 0 });
        }
        let sigma = self.apply(rho);
        let dkl_dsigma = -1.0 / sigma + sigma / (sigma_p * sigma_p);
        Ok(dkl_dsigma * self.derivative(rho))
    }

    /// Plain gradient descent on `rho` against the scalar KL until
    /// `sigma(rho) >= target`. Returns the number of steps taken, or
    /// `max_steps` if the target is never reached.
    pub fn convergence_race(
        self,
        sigma_p: f64,
        sigma_q0: f64,
        lr: f64,
        target: f64,
        max_steps: usize,
    ) -> Result<usize> {
        let mut steps = max_steps;
        self.race_loop(sigma_p, sigma_q0, lr, target, max_steps, |step, sigma| {
            if sigma >= target {
                steps = step;
                false
            } else {
                true
            }
        })?;
        Ok(steps)
    }

    /// The `(step, sigma)` trajectory of the same race, recorded every
    /// `every` steps (plus step 0), for plotting.
    pub fn race_trajectory(
        self,
        sigma_p: f64,
        sigma_q0: f64,
        lr: f64,
        steps: usize,
        every: usize,
    ) -> Result<Vec<(usize, f64)>> {
        let every = every.max(1);
        let mut out = Vec::with_capacity(steps / every + 2);
        self.race_loop(
            sigma_p,
            sigma_q0,
            lr,
            f64::INFINITY,
            steps,
            |step, sigma| {
                if step % every == 0 || step == steps {
                    out.push((step, sigma));
                }
                true
            },
        )?;
        Ok(out)
    }

    fn race_loop(
        self,
        sigma_p: f64,
        sigma_q0: f64,
        lr: f64,
        target: f64,
        max_steps: usize,
        mut visit: impl FnMut(usize, f64) -> bool,
    ) -> Result<()> {
        if !(sigma_q0 > 0.0) || !(sigma_p > 0.0) {
            return Err(Error::InvalidArgument(
                "sigma_q0 and sigma_p must be positive".into(),
            ));
        }
        if target.is_finite() && !(target > 0.0 && target <= sigma_p) {
            return Err(Error::InvalidArgument(format!(
                "target {target} must lie in (0, sigma_p]"
            )));
        }
        let mut rho = self.inverse(sigma_q0)?;
        for step in 0..=max_steps {
            if !visit(step, self.apply(rho)) || step == max_steps {
                break;
            }
            rho -= lr * self.kl_grad_rho(rho, sigma_p)?;
        }
        Ok(())
    }
}

/// Overflow-safe `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `KL(N(0, sigma^2) || N(0, sigma_p^2))`.
pub fn scalar_kl(sigma: f64, sigma_p: f64) -> f64 {
    (sigma_p / sigma).ln() + sigma * sigma / (2.0 * sigma_p * sigma_p) - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_kl(map: ParamMap, rho: f64, sigma_p: f64) -> f64 {
        let h = 1e-6 * rho.abs().max(1e-3);
        (scalar_kl(map.apply(rho + h), sigma_p) - scalar_kl(map.apply(rho - h), sigma_p))
            / (2.0 * h)
    }

    #[test]
    fn apply_values() {
        assert!((ParamMap::Square.apply(0.1) - 0.01).abs() < 1e-17);
        assert!((ParamMap::Softplus.apply(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        // log(1+e^30) = 30 + log(1+e^-30) = 30 + 9.357622968839e-14
        assert!((ParamMap::Softplus.apply(30.0) - 30.0).abs() < 1e-9);
        assert!(ParamMap::Softplus.apply(1000.0).is_finite());
        assert!(ParamMap::Softplus.apply(-1000.0) >= 0.0);
    }

    #[test]
    fn inverse_round_trips() {
        for map in [ParamMap::Square, ParamMap::Softplus] {
            for s in [1e-4, 0.01, 0.5, 3.0, 40.0] {
                let rho = map.inverse(s).unwrap();
                assert!(
                    (map.apply(rho) - s).abs() < 1e-12 * s.max(1.0),
                    "{map:?} {s}"
                );
            }
        }
    }

    #[test]
    fn square_gradient_values() {
        let g = ParamMap::Square.kl_grad_rho(0.1, 1.0).unwrap();
        assert!((g - (-19.998)).abs() < 1e-10, "{g}");
        let sp: f64 = 0.3;
        let g = ParamMap::Square.kl_grad_rho(sp.sqrt(), sp).unwrap();
        assert!(g.abs() < 1e-12);
        assert!(ParamMap::Square.kl_grad_rho(0.0, 1.0).is_err());
    }

    #[test]
    fn softplus_gradient_plateau_near_minus_one() {
        let rho = ParamMap::Softplus.inverse(0.01).unwrap();
        let g = ParamMap::Softplus.kl_grad_rho(rho, 1.0).unwrap();
        assert!((g + 1.0).abs() < 0.01, "{g}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for map in [ParamMap::Square, ParamMap::Softplus] {
            for &rho in &[-2.0, -0.3, 0.2, 0.7, 1.4] {
                for &sp in &[0.2, 1.0] {
                    let a = map.kl_grad_rho(rho, sp).unwrap();
                    let f = fd_kl(map, rho, sp);
                    assert!(
                        (a - f).abs() <= 1e-6 * a.abs().max(f.abs()),
                        "{map:?} {rho} {sp}: {a} vs {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_magnitude_regimes() {
        for i in 1..=100 {
            let rho = 0.001 * i as f64;
            let g = ParamMap::Square.kl_grad_rho(rho, 1.0).unwrap();
            assert!(g.abs() >= 1.0 / rho);
        }
        for i in 1..=50 {
            let sigma = 0.001 * i as f64;
            let rho = ParamMap::Softplus.inverse(sigma).unwrap();
            let g = ParamMap::Softplus.kl_grad_rho(rho, 1.0).unwrap();
            assert!(g.abs() <= 1.1, "{sigma}: {g}");
        }
    }

    #[test]
    fn race_reference_setting() {
        let sq = ParamMap::Square
            .convergence_race(1.0, 0.01, 1e-4, 0.9, 10_000)
            .unwrap();
        assert!(sq < 10_000, "square took {sq}");
        let sp = ParamMap::Softplus
            .convergence_race(1.0, 0.01, 1e-4, 0.9, 50_000)
            .unwrap();
        assert_eq!(sp, 50_000);
    }

    #[test]
    fn race_already_at_target() {
        let steps = ParamMap::Square
            .convergence_race(1.0, 1.0, 1e-4, 0.9, 100)
            .unwrap();
        assert_eq!(steps, 0);
    }

    #[test]
    fn race_square_beats_softplus_on_grid() {
        for &sp in &[0.1, 0.2, 0.5, 1.0] {
            for &s0 in &[0.005, 0.01, 0.05] {
                if s0 >= 0.9 * sp {
                    continue;
                }
                let a = ParamMap::Square
                    .convergence_race(sp, s0, 1e-4, 0.9 * sp, 400_000)
                    .unwrap();
                let b = ParamMap::Softplus
                    .convergence_race(sp, s0, 1e-4, 0.9 * sp, 400_000)
                    .unwrap();
                assert!(a < b, "sp={sp} s0={s0}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn trajectory_is_monotone_and_sampled() {
        let t = ParamMap::Square
            .race_trajectory(1.0, 0.01, 1e-4, 1000, 100)
            .unwrap();
        assert_eq!(t.len(), 11);
        assert_eq!(t[0], (0, ParamMap::Square.apply(0.1)));
        assert!(t.windows(2).all(|w| w[1].1 > w[0].1));
    }
}
