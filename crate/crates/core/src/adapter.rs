//! The Bayesianized low-rank adapter.
//!
//! A frozen base weight `W0` (m x n) is adapted by `B A`, where `B` (m x r)
//! is deterministic and `A` (r x n) is Gaussian with mean `M` and
//! element-wise std `Omega = map(G)`. With the default square map,
//! `Omega = G o G`. `Omega` is never stored.
//!
//! Three forward passes are provided: the posterior mean, a single draw of
//! `A` shared by the whole batch, and flipout, where each example sees the
//! shared noise flipped by its own pair of sign vectors.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::param_map::ParamMap;
use crate::sampling::SeededRng;

const MAGIC: &[u8; 8] = b"BLOBADPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalAdapter {
    w0: Matrix,
    pub b: Matrix,
    pub mean_a: Matrix,
    pub g: Matrix,
    pub param_map: ParamMap,
}

/// Per-batch flipout state: `s` is n x b, `t` is b x r, both with +-1
/// entries, and `e` is r x n standard normal noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipoutMasks {
    pub s: Matrix,
    pub t: Matrix,
    pub e: Matrix,
}

impl FlipoutMasks {
    pub fn new(s: Matrix, t: Matrix, e: Matrix) -> Result<Self> {
        let signs = |m: &Matrix| m.as_slice().iter().all(|v| *v == 1.0 || *v == -1.0);
        if !signs(&s) || !signs(&t) {
            return Err(Error::InvalidArgument(
                "flipout sign masks must be exactly +-1".into(),
            ));
        }
        if s.cols() != t.rows() || t.cols() != e.rows() || s.rows() != e.cols() {
            return Err(Error::DimensionMismatch {
                op: "flipout masks",
                lhs: s.shape(),
                rhs: t.shape(),
            });
        }
        Ok(FlipoutMasks { s, t, e })
    }

    /// Fresh masks and noise for one forward call on a batch of `batch` inputs.
    pub fn sample(rng: &mut SeededRng, n: usize, batch: usize, rank: usize) -> Self {
        let e = rng.gaussian_matrix(rank, n);
        let s = rng.rademacher_matrix(n, batch);
        let t = rng.rademacher_matrix(batch, rank);
        FlipoutMasks { s, t, e }
    }

    /// All-ones sign masks around the given noise.
    pub fn unit(noise: Matrix, batch: usize) -> Self {
        let (rank, n) = noise.shape();
        FlipoutMasks {
            s: Matrix::filled(n, batch, 1.0),
            t: Matrix::filled(batch, rank, 1.0),
            e: noise,
        }
    }

    pub fn batch(&self) -> usize {
        self.s.cols()
    }
}

/// How the noise enters the adapter path of a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Perturbation<'a> {
    None,
    Shared(&'a Matrix),
    Flipout(&'a FlipoutMasks),
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AdapterCache {
    /// Adapter input (possibly dropout-masked), n x b.
    h_adapter: Matrix,
    /// `M H_a` plus the noise term, r x b.
    y: Matrix,
    /// `E o Omega`, when noise is active.
    delta_a: Option<Matrix>,
    /// `H_a o S`, for flipout.
    h_signed: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct AdapterGrads {
    pub b: Matrix,
    pub mean_a: Matrix,
    pub g: Matrix,
}

impl AdapterGrads {
    pub fn zeros_like(adapter: &VariationalAdapter) -> Self {
        AdapterGrads {
            b: Matrix::zeros(adapter.b.rows(), adapter.b.cols()),
            mean_a: Matrix::zeros(adapter.mean_a.rows(), adapter.mean_a.cols()),
            g: Matrix::zeros(adapter.g.rows(), adapter.g.cols()),
        }
    }

    pub fn accumulate(&mut self, other: &AdapterGrads, weight: f64) -> Result<()> {
        self.b.axpy(weight, &other.b)?;
        self.mean_a.axpy(weight, &other.mean_a)?;
        self.g.axpy(weight, &other.g)
    }
}

impl VariationalAdapter {
    pub fn new(w0: Matrix, b: Matrix, mean_a: Matrix, g: Matrix) -> Result<Self> {
        Self::with_map(w0, b, mean_a, g, ParamMap::Square)
    }

    pub fn with_map(
        w0: Matrix,
        b: Matrix,
        mean_a: Matrix,
        g: Matrix,
        param_map: ParamMap,
    ) -> Result<Self> {
        let (m, n) = w0.shape();
        let r = b.cols();
        if r == 0 || r >= m.min(n) {
            return Err(Error::InvalidArgument(format!(
                "rank {r} must satisfy 0 < r < min({m}, {n})"
            )));
        }
        if b.rows() != m {
            return Err(Error::DimensionMismatch {
                op: "adapter B",
                lhs: w0.shape(),
                rhs: b.shape(),
            });
        }
        if mean_a.shape() != (r, n) || g.shape() != (r, n) {
            return Err(Error::DimensionMismatch {
                op: "adapter A",
                lhs: (r, n),
                rhs: mean_a.shape(),
            });
        }
        Ok(VariationalAdapter {
            w0,
            b,
            mean_a,
            g,
            param_map,
        })
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    /// Output dimension.
    pub fn m(&self) -> usize {
        self.w0.rows()
    }

    /// Input dimension.
    pub fn n(&self) -> usize {
        self.w0.cols()
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    /// Element-wise posterior std of `A`.
    pub fn omega(&self) -> Matrix {
        let map = self.param_map;
        self.g.map(|v| map.apply(v))
    }

    /// `W0 + B M`, the posterior mean of the full weight.
    pub fn mean_weight(&self) -> Result<Matrix> {
        self.w0.add(&self.b.matmul(&self.mean_a)?)
    }

    /// Reparameterized draw `M + Omega o noise`.
    pub fn sample_a(&self, noise: &Matrix) -> Result<Matrix> {
        let mut a = self.mean_a.clone();
        a.add_assign(&self.omega().hadamard(noise)?)?;
        Ok(a)
    }

    pub fn forward_mean(&self, h: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(h, h, Perturbation::None, &self.b)?.0)
    }

    pub fn forward_flipout(&self, h: &Matrix, masks: &FlipoutMasks) -> Result<Matrix> {
        Ok(self
            .forward_cached(h, h, Perturbation::Flipout(masks), &self.b)?
            .0)
    }

    /// One draw of `A` shared by every example in the batch.
    pub fn forward_naive_shared(&self, h: &Matrix, noise: &Matrix) -> Result<Matrix> {
        Ok(self
            .forward_cached(h, h, Perturbation::Shared(noise), &self.b)?
            .0)
    }

    /// `W0 H + B_eff (M H_a + noise term)`; `h` feeds the frozen path and
    /// `h_adapter` the low-rank path.
    pub(crate) fn forward_cached(
        &self,
        h: &Matrix,
        h_adapter: &Matrix,
        pert: Perturbation<'_>,
        b_eff: &Matrix,
    ) -> Result<(Matrix, AdapterCache)> {
        if h.rows() != self.n() || h_adapter.shape() != h.shape() {
            return Err(Error::DimensionMismatch {
                op: "adapter forward",
                lhs: self.w0.shape(),
                rhs: h.shape(),
            });
        }
        if h.cols() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut y = self.mean_a.matmul(h_adapter)?;
        let (delta_a, h_signed) = match pert {
            Perturbation::None => (None, None),
            Perturbation::Shared(noise) => {
                let delta = noise.hadamard(&self.omega())?;
                y.add_assign(&delta.matmul(h_adapter)?)?;
                (Some(delta), None)
            }
            Perturbation::Flipout(masks) => {
                if masks.batch() != h.cols() {
                    return Err(Error::DimensionMismatch {
                        op: "flipout batch",
                        lhs: masks.s.shape(),
                        rhs: h.shape(),
                    });
                }
                let delta = masks.e.hadamard(&self.omega())?;
                let hs = h_adapter.hadamard(&masks.s)?;
                // T is stored b x r; it multiplies the r x b noise term transposed.
                let noise_term = delta.matmul(&hs)?.hadamard(&masks.t.transpose())?;
                y.add_assign(&noise_term)?;
                (Some(delta), Some(hs))
            }
        };
        let mut z = self.w0.matmul(h)?;
        z.add_assign(&b_eff.matmul(&y)?)?;
        Ok((
            z,
            AdapterCache {
                h_adapter: h_adapter.clone(),
                y,
                delta_a,
                h_signed,
            },
        ))
    }

    /// Reverse pass through `forward_cached`. Returns the parameter grads,
    /// the grad with respect to the frozen-path input, and the grad with
    /// respect to the adapter-path input.
    pub(crate) fn backward(
        &self,
        cache: &AdapterCache,
        dz: &Matrix,
        pert: Perturbation<'_>,
        b_eff: &Matrix,
    ) -> Result<(AdapterGrads, Matrix, Matrix)> {
        let d_b = dz.matmul(&cache.y.transpose())?;
        let dy = b_eff.transpose().matmul(dz)?;
        let d_mean = dy.matmul(&cache.h_adapter.transpose())?;
        let mut d_h_adapter = self.mean_a.transpose().matmul(&dy)?;
        let d_h_direct = self.w0.transpose().matmul(dz)?;

        let d_delta = match (pert, &cache.delta_a) {
            (Perturbation::None, _) => None,
            (Perturbation::Shared(_), Some(delta)) => {
                d_h_adapter.add_assign(&delta.transpose().matmul(&dy)?)?;
                Some(dy.matmul(&cache.h_adapter.transpose())?)
            }
            (Perturbation::Flipout(masks), Some(delta)) => {
                let dv = dy.hadamard(&masks.t.transpose())?;
                let hs = cache.h_signed.as_ref().expect("flipout cache");
                let d_hs = delta.transpose().matmul(&dv)?;
                d_h_adapter.add_assign(&d_hs.hadamard(&masks.s)?)?;
                Some(dv.matmul(&hs.transpose())?)
            }
            _ => unreachable!("cache does not match perturbation"),
        };

        let d_g = match (d_delta, pert) {
            (Some(d_delta), Perturbation::Shared(noise)) => {
                self.std_grad(&d_delta.hadamard(noise)?)
            }
            (Some(d_delta), Perturbation::Flipout(masks)) => {
                self.std_grad(&d_delta.hadamard(&masks.e)?)
            }
            _ => Matrix::zeros(self.g.rows(), self.g.cols()),
        };

        Ok((
            AdapterGrads {
                b: d_b,
                mean_a: d_mean,
                g: d_g,
            },
            d_h_direct,
            d_h_adapter,
        ))
    }

    /// Chain rule from `d/dOmega` to `d/dG`.
    pub(crate) fn std_grad(&self, d_omega: &Matrix) -> Matrix {
        let map = self.param_map;
        Matrix::from_fn(self.g.rows(), self.g.cols(), |i, j| {
            d_omega[(i, j)] * map.derivative(self.g[(i, j)])
        })
    }

    /// Writes the binary record: magic, version, map, dims, then
    /// `W0, B, M, G` as little-endian `f64` in row-major order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[match self.param_map {
            ParamMap::Square => 0u8,
            ParamMap::Softplus => 1u8,
        }])?;
        for d in [self.m(), self.n(), self.rank()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for mat in [&self.w0, &self.b, &self.mean_a, &self.g] {
            write_f64s(w, mat.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad adapter magic".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported adapter version {version}"
            )));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let param_map = match kind[0] {
            0 => ParamMap::Square,
            1 => ParamMap::Softplus,
            k => return Err(Error::Format(format!("unknown param map tag {k}"))),
        };
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *d = usize::try_from(u64::from_le_bytes(buf))
                .map_err(|_| Error::Format("dimension overflow".into()))?;
        }
        let [m, n, rank] = dims;
        if m.checked_mul(n).is_none_or(|mn| mn > 1 << 28) {
            return Err(Error::Format(format!("implausible adapter size {m}x{n}")));
        }
        let w0 = read_matrix(r, m, n)?;
        let b = read_matrix(r, m, rank)?;
        let mean_a = read_matrix(r, rank, n)?;
        let g = read_matrix(r, rank, n)?;
        VariationalAdapter::with_map(w0, b, mean_a, g, param_map)
    }
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Matrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_adapter(rng: &mut SeededRng, m: usize, n: usize, r: usize) -> VariationalAdapter {
        VariationalAdapter::new(
            rng.gaussian_matrix(m, n),
            rng.gaussian_matrix(m, r),
            rng.gaussian_matrix(r, n),
            rng.uniform_matrix(r, n, 0.2, 0.6),
        )
        .unwrap()
    }

    /// Independent per-example draws of `A`: the reference flipout emulates.
    fn naive_independent(ad: &VariationalAdapter, h: &Matrix, noises: &[Matrix]) -> Matrix {
        let mut out = Matrix::zeros(ad.m(), h.cols());
        for (j, noise) in noises.iter().enumerate() {
            let a = ad.sample_a(noise).unwrap();
            let w = ad.w0().add(&ad.b.matmul(&a).unwrap()).unwrap();
            let col = Matrix::column(&h.col_vec(j)).unwrap();
            let z = w.matmul(&col).unwrap();
            for i in 0..ad.m() {
                out[(i, j)] = z[(i, 0)];
            }
        }
        out
    }

    #[test]
    fn rank_must_be_low() {
        let err = VariationalAdapter::new(
            Matrix::zeros(3, 3),
            Matrix::zeros(3, 3),
            Matrix::zeros(3, 3),
            Matrix::zeros(3, 3),
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_b_preserves_base_output() {
        let mut rng = SeededRng::new(1);
        let mut ad = random_adapter(&mut rng, 4, 3, 2);
        ad.b = Matrix::zeros(4, 2);
        let h = rng.gaussian_matrix(3, 5);
        let base = ad.w0().matmul(&h).unwrap();
        assert_eq!(ad.forward_mean(&h).unwrap(), base);
        let masks = FlipoutMasks::sample(&mut rng, 3, 5, 2);
        assert_eq!(ad.forward_flipout(&h, &masks).unwrap(), base);
    }

    #[test]
    fn identity_padded_factors() {
        let mut b = Matrix::zeros(3, 2);
        b[(0, 0)] = 1.0;
        b[(1, 1)] = 1.0;
        let mut m = Matrix::zeros(2, 3);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        let ad = VariationalAdapter::new(
            Matrix::zeros(3, 3),
            b.clone(),
            m.clone(),
            Matrix::filled(2, 3, 0.1),
        )
        .unwrap();
        let z = ad.forward_mean(&Matrix::identity(3)).unwrap();
        assert_eq!(z, b.matmul(&m).unwrap());
    }

    #[test]
    fn forward_mean_matches_two_term_product() {
        let mut rng = SeededRng::new(2);
        let ad = random_adapter(&mut rng, 4, 3, 2);
        let h = rng.gaussian_matrix(3, 6);
        let oracle = ad
            .w0()
            .matmul(&h)
            .unwrap()
            .add(&ad.b.matmul(&ad.mean_a.matmul(&h).unwrap()).unwrap())
            .unwrap();
        assert!(ad.forward_mean(&h).unwrap().sub(&oracle).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let mut rng = SeededRng::new(3);
        let ad = random_adapter(&mut rng, 4, 3, 2);
        assert!(ad.forward_mean(&Matrix::zeros(4, 2)).is_err());
        assert!(matches!(
            ad.forward_mean(&Matrix::zeros(3, 0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sample_a_degenerate_cases() {
        let mut rng = SeededRng::new(4);
        let mut ad = random_adapter(&mut rng, 4, 3, 2);
        assert_eq!(ad.sample_a(&Matrix::zeros(2, 3)).unwrap(), ad.mean_a);
        ad.g = Matrix::zeros(2, 3);
        assert_eq!(ad.sample_a(&rng.gaussian_matrix(2, 3)).unwrap(), ad.mean_a);
    }

    #[test]
    fn sample_a_moments() {
        let mut rng = SeededRng::new(5);
        let ad = random_adapter(&mut rng, 4, 3, 2);
        let omega = ad.omega();
        let draws = 100_000;
        let mut sum = Matrix::zeros(2, 3);
        let mut sum_sq = Matrix::zeros(2, 3);
        for _ in 0..draws {
            let a = ad.sample_a(&rng.gaussian_matrix(2, 3)).unwrap();
            sum.add_assign(&a).unwrap();
            sum_sq.add_assign(&a.hadamard(&a).unwrap()).unwrap();
        }
        let nf = draws as f64;
        for i in 0..2 {
            for j in 0..3 {
                let mean = sum[(i, j)] / nf;
                let sd = (sum_sq[(i, j)] / nf - mean * mean).sqrt();
                assert!((mean - ad.mean_a[(i, j)]).abs() <= 4.0 * omega[(i, j)] / nf.sqrt());
                assert!((sd / omega[(i, j)] - 1.0).abs() < 0.02);
            }
        }
    }

    #[test]
    fn flipout_without_noise_is_mean() {
        let mut rng = SeededRng::new(6);
        let ad = random_adapter(&mut rng, 4, 3, 2);
        let h = rng.gaussian_matrix(3, 5);
        let mut masks = FlipoutMasks::sample(&mut rng, 3, 5, 2);
        masks.e = Matrix::zeros(2, 3);
        assert_eq!(
            ad.forward_flipout(&h, &masks).unwrap(),
            ad.forward_mean(&h).unwrap()
        );
        assert_eq!(
            ad.forward_naive_shared(&h, &Matrix::zeros(2, 3)).unwrap(),
            ad.forward_mean(&h).unwrap()
        );
    }

    #[test]
    fn single_example_unit_masks_match_naive() {
        let mut rng = SeededRng::new(7);
        let ad = random_adapter(&mut rng, 4, 3, 2);
        let h = rng.gaussian_matrix(3, 1);
        let noise = rng.gaussian_matrix(2, 3);
        let masks = FlipoutMasks::unit(noise.clone(), 1);
        let flip = ad.forward_flipout(&h, &masks).unwrap();
        let shared = ad.forward_naive_shared(&h, &noise).unwrap();
        let naive = naive_independent(&ad, &h, std::slice::from_ref(&noise));
        assert!(flip.sub(&shared).unwrap().max_abs() < 1e-12);
        assert!(flip.sub(&naive).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn flipout_equals_per_example_sign_flipped_draws() {
        // Delta A_i = (E o Omega) o t_i s_i^T for every example i.
        let mut rng = SeededRng::new(8);
        let ad = random_adapter(&mut rng, 5, 4, 2);
        let h = rng.gaussian_matrix(4, 3);
        let masks = FlipoutMasks::sample(&mut rng, 4, 3, 2);
        let flip = ad.forward_flipout(&h, &masks).unwrap();
        let noises: Vec<Matrix> = (0..3)
            .map(|i| {
                Matrix::from_fn(2, 4, |k, j| {
                    masks.e[(k, j)] * masks.t[(i, k)] * masks.s[(j, i)]
                })
            })
            .collect();
        let naive = naive_independent(&ad, &h, &noises);
        assert!(flip.sub(&naive).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn flipout_expectation_is_mean() {
        let mut rng = SeededRng::new(9);
        let ad = random_adapter(&mut rng, 3, 4, 2);
        let h = rng.gaussian_matrix(4, 4);
        let mean = ad.forward_mean(&h).unwrap();
        let draws = 100_000;
        let mut sum = Matrix::zeros(3, 4);
        let mut sum_sq = Matrix::zeros(3, 4);
        for _ in 0..draws {
            let masks = FlipoutMasks::sample(&mut rng, 4, 4, 2);
            let z = ad.forward_flipout(&h, &masks).unwrap().sub(&mean).unwrap();
            sum.add_assign(&z).unwrap();
            sum_sq.add_assign(&z.hadamard(&z).unwrap()).unwrap();
        }
        let nf = draws as f64;
        for (s, sq) in sum.as_slice().iter().zip(sum_sq.as_slice()) {
            let m = s / nf;
            let se = ((sq / nf - m * m) / nf).sqrt();
            assert!(m.abs() <= 3.0 * se, "{m} vs se {se}");
        }
    }

    #[test]
    fn shared_noise_covaries_more_than_flipout() {
        let mut rng = SeededRng::new(10);
        let ad = random_adapter(&mut rng, 4, 4, 2);
        let col = rng.gaussian_matrix(4, 1);
        let h = Matrix::from_fn(4, 2, |i, _| col[(i, 0)]);
        let mean = ad.forward_mean(&h).unwrap();
        let draws = 10_000;
        let (mut cov_shared, mut cov_flip) = (0.0, 0.0);
        for _ in 0..draws {
            let masks = FlipoutMasks::sample(&mut rng, 4, 2, 2);
            let f = ad.forward_flipout(&h, &masks).unwrap().sub(&mean).unwrap();
            let s = ad
                .forward_naive_shared(&h, &masks.e)
                .unwrap()
                .sub(&mean)
                .unwrap();
            for i in 0..4 {
                cov_flip += f[(i, 0)] * f[(i, 1)];
                cov_shared += s[(i, 0)] * s[(i, 1)];
            }
        }
        assert!(cov_shared.abs() / draws as f64 > 10.0 * cov_flip.abs() / draws as f64);
    }

    #[test]
    fn masks_validate() {
        let bad = FlipoutMasks::new(
            Matrix::filled(3, 2, 0.5),
            Matrix::filled(2, 1, 1.0),
            Matrix::zeros(1, 3),
        );
        assert!(bad.is_err());
        let ok = FlipoutMasks::new(
            Matrix::filled(3, 2, -1.0),
            Matrix::filled(2, 1, 1.0),
            Matrix::zeros(1, 3),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let mut rng = SeededRng::new(11);
        let mut ad = random_adapter(&mut rng, 5, 4, 3);
        ad.param_map = ParamMap::Softplus;
        let mut buf = Vec::new();
        ad.write_to(&mut buf).unwrap();
        let back = VariationalAdapter::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ad);
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.g), bits(&ad.g));

        buf[0] = b'X';
        assert!(matches!(
            VariationalAdapter::read_from(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
