//! Accuracy, expected calibration error and negative log-likelihood.
//!
//! Probabilities are one row per example. ECE bins the top-class confidence
//! into equal-width bins `(k/B, (k+1)/B]`, with a confidence of exactly 0
//! placed in the first bin.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::csv_err;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trainer::argmax;

pub const DEFAULT_BINS: usize = 15;
/// Probabilities below this are clamped before taking the log.
pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub mean_acc: f64,
}

impl Bin {
    /// This bin's share of the ECE sum.
    pub fn contribution(&self, n: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.count as f64 / n as f64) * (self.mean_acc - self.mean_conf).abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub acc: f64,
    pub ece: f64,
    /// Mean over examples.
    pub nll: f64,
    pub nll_sum: f64,
    /// Examples whose true-label probability was clamped at [`NLL_FLOOR`].
    pub nll_clamped: usize,
    pub bins: Vec<Bin>,
    pub n: usize,
}

impl CalibrationReport {
    /// ECE recomputed from the bin table, summed in bin order.
    pub fn ece_from_bins(&self) -> f64 {
        self.bins.iter().map(|b| b.contribution(self.n)).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reliability-diagram table: `lower,upper,count,mean_conf,mean_acc`.
    pub fn write_bins_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for b in &self.bins {
            out.serialize(b).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_inputs(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no examples".into()));
    }
    if probs.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            op: "metrics",
            lhs: probs.shape(),
            rhs: (labels.len(), 1),
        });
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range at row {i}"
            )));
        }
        let row = probs.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_inputs(probs, labels)?;
    Ok(correct(probs, labels).filter(|&c| c).count() as f64 / labels.len() as f64)
}

fn correct<'a>(probs: &'a Matrix, labels: &'a [usize]) -> impl Iterator<Item = bool> + 'a {
    labels
        .iter()
        .enumerate()
        .map(move |(i, &y)| argmax(probs.row(i).iter().copied()) == y)
}

/// Mean negative log-probability of the true labels, the sum, and how many
/// probabilities were clamped.
pub fn nll(probs: &Matrix, labels: &[usize]) -> Result<(f64, f64, usize)> {
    check_inputs(probs, labels)?;
    let mut sum = 0.0;
    let mut clamped = 0;
    for (i, &y) in labels.iter().enumerate() {
        let p = probs[(i, y)];
        if p < NLL_FLOOR {
            clamped += 1;
        }
        sum -= p.max(NLL_FLOOR).ln();
    }
    Ok((sum / labels.len() as f64, sum, clamped))
}

/// Bin index of a confidence in `[0, 1]`, 0-based.
fn bin_of(conf: f64, n_bins: usize) -> usize {
    // smallest k with conf <= (k+1)/B, comparing against the same edges the bins report
    let guess = ((conf * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
    if guess > 0 && conf <= edge(guess, n_bins) {
        guess - 1
    } else if guess + 1 < n_bins && conf > edge(guess + 1, n_bins) {
        guess + 1
    } else {
        guess
    }
}

fn edge(k: usize, n_bins: usize) -> f64 {
    k as f64 / n_bins as f64
}

/// Full report with `n_bins` equal-width confidence bins.
pub fn ece(probs: &Matrix, labels: &[usize], n_bins: usize) -> Result<CalibrationReport> {
    check_inputs(probs, labels)?;
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let n = labels.len();
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hit_sum = vec![0.0; n_bins];
    for (i, hit) in correct(probs, labels).enumerate() {
        let conf = probs
            .row(i)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let k = bin_of(conf, n_bins);
        count[k] += 1;
        conf_sum[k] += conf;
        hit_sum[k] += if hit { 1.0 } else { 0.0 };
    }
    let bins: Vec<Bin> = (0..n_bins)
        .map(|k| {
            let c = count[k];
            let (mean_conf, mean_acc) = if c == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[k] / c as f64, hit_sum[k] / c as f64)
            };
            Bin {
                lower: edge(k, n_bins),
                upper: edge(k + 1, n_bins),
                count: c,
                mean_conf,
                mean_acc,
            }
        })
        .collect();
    let (nll_mean, nll_sum, nll_clamped) = nll(probs, labels)?;
    let mut report = CalibrationReport {
        acc: hit_sum.iter().sum::<f64>() / n as f64,
        ece: 0.0,
        nll: nll_mean,
        nll_sum,
        nll_clamped,
        bins,
        n,
    };
    report.ece = report.ece_from_bins();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SeededRng;

    fn binary(confs: &[f64]) -> Matrix {
        Matrix::from_fn(confs.len(), 2, |i, j| {
            if j == 0 {
                confs[i]
            } else {
                1.0 - confs[i]
            }
        })
    }

    #[test]
    fn hand_binned_case() {
        let probs = binary(&[0.6, 0.6, 0.9, 0.9]);
        let r = ece(&probs, &[0, 1, 0, 0], 15).unwrap();
        assert!((r.ece - 0.10).abs() <= 1e-12, "{}", r.ece);
        assert_eq!(r.bins[8].count, 2);
        assert_eq!(r.bins[13].count, 2);
        assert_eq!(r.acc, 0.75);
    }

    #[test]
    fn confident_and_correct_is_calibrated() {
        let probs = binary(&[1.0, 1.0, 1.0]);
        let r = ece(&probs, &[0, 0, 0], 15).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.nll, 0.0);
        assert_eq!(r.bins[14].count, 3);
    }

    #[test]
    fn edge_placement() {
        assert_eq!(bin_of(0.0, 15), 0);
        assert_eq!(bin_of(1.0, 15), 14);
        assert_eq!(bin_of(edge(9, 15), 15), 8);
        assert_eq!(bin_of(edge(9, 15) + 1e-15, 15), 9);
        for k in 1..15 {
            assert_eq!(bin_of(edge(k, 15), 15), k - 1, "edge {k}");
        }
    }

    #[test]
    fn nll_values() {
        let probs = binary(&[0.5, 0.25]);
        let (mean, sum, clamped) = nll(&probs, &[0, 0]).unwrap();
        assert!((mean - 1.5 * 2f64.ln()).abs() < 1e-15);
        assert!((sum - 3.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(clamped, 0);
        let c = 7;
        let uniform = Matrix::filled(5, c, 1.0 / c as f64);
        let (m, _, _) = nll(&uniform, &[0, 1, 2, 3, 6]).unwrap();
        assert!((m - (c as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped_and_flagged() {
        let probs = binary(&[1.0]);
        let r = ece(&probs, &[1], 15).unwrap();
        assert_eq!(r.nll_clamped, 1);
        assert!((r.nll + NLL_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_decreases_toward_truth() {
        let mut last = f64::INFINITY;
        for p in [0.1, 0.3, 0.5, 0.8, 0.99] {
            let (m, _, _) = nll(&binary(&[p]), &[0]).unwrap();
            assert!(m < last);
            last = m;
        }
    }

    #[test]
    fn accuracy_cases() {
        let probs = binary(&[0.9, 0.8, 0.3, 0.6]);
        assert_eq!(accuracy(&probs, &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(accuracy(&probs, &[0, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&probs, &[1, 1, 0, 1]).unwrap(), 0.0);
        // a tie goes to class 0
        assert_eq!(accuracy(&binary(&[0.5]), &[0]).unwrap(), 1.0);
    }

    #[test]
    fn bad_inputs() {
        assert!(ece(&Matrix::zeros(0, 2), &[], 15).is_err());
        assert!(accuracy(&binary(&[0.5]), &[2]).is_err());
        let not_dist = Matrix::from_rows(&[&[0.5, 0.6]]).unwrap();
        assert!(nll(&not_dist, &[0]).is_err());
    }

    #[test]
    fn calibrated_stream_has_small_ece() {
        let mut rng = SeededRng::new(42);
        let n = 100_000;
        let mut confs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.uniform(0.5, 1.0);
            confs.push(c);
            labels.push(if rng.bernoulli(c) { 0 } else { 1 });
        }
        let r = ece(&binary(&confs), &labels, 15).unwrap();
        assert!(r.ece <= 0.02, "{}", r.ece);
    }

    #[test]
    fn uniform_prediction_has_near_zero_ece() {
        let c = 4;
        let mut rng = SeededRng::new(1);
        let n = 20_000;
        let labels: Vec<usize> = (0..n).map(|_| rng.index(c)).collect();
        let probs = Matrix::filled(n, c, 0.25);
        let r = ece(&probs, &labels, 15).unwrap();
        // argmax is always class 0, right a quarter of the time; 3 standard errors
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!(r.ece <= 3.0 * se, "{}", r.ece);
    }

    #[test]
    fn bins_reconstruct_ece_and_counts() {
        let mut rng = SeededRng::new(3);
        let n = 1000;
        let probs = Matrix::from_fn(n, 3, |_, _| rng.uniform(0.0, 1.0));
        let probs = Matrix::from_fn(n, 3, |i, j| {
            probs[(i, j)] / probs.row(i).iter().sum::<f64>()
        });
        let labels: Vec<usize> = (0..n).map(|_| rng.index(3)).collect();
        let r = ece(&probs, &labels, 15).unwrap();
        assert_eq!(r.ece.to_bits(), r.ece_from_bins().to_bits());
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), n);
        assert!((0.0..=1.0).contains(&r.ece));
        let json = r.to_json().unwrap();
        let back: CalibrationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.ece.to_bits(), r.ece.to_bits());
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = SeededRng::new(8);
        let n = 500;
        let confs: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.index(2)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let a = ece(&binary(&confs), &labels, 15).unwrap();
        let pc: Vec<f64> = perm.iter().map(|&i| confs[i]).collect();
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let b = ece(&binary(&pc), &pl, 15).unwrap();
        assert!((a.ece - b.ece).abs() < 1e-12);
        assert!((a.nll - b.nll).abs() < 1e-12);
        assert_eq!(a.acc, b.acc);
    }
}
