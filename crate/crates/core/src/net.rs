//! A small frozen-backbone classifier with a variational adapter on every
//! dense layer.
//!
//! Layer `l` computes `z = W0 h + b0 + B_eff (M h_a + noise term)`, followed
//! by `tanh` on every layer except the last, whose output is the logits.
//! `W0` and `b0` are frozen; only `M`, `G` and `B` receive gradients.
//! Columns of every activation matrix are examples.

use std::io::{Read, Write};

use crate::adapter::{
    read_matrix, write_f64s, AdapterCache, AdapterGrads, FlipoutMasks, Perturbation,
    VariationalAdapter,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::param_map::ParamMap;
use crate::sampling::SeededRng;

const NET_MAGIC: &[u8; 8] = b"BLOBNET\0";
const NET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub adapter: VariationalAdapter,
    bias: Matrix,
}

impl Layer {
    pub fn new(adapter: VariationalAdapter, bias: Matrix) -> Result<Self> {
        if bias.shape() != (adapter.m(), 1) {
            return Err(Error::DimensionMismatch {
                op: "layer bias",
                lhs: (adapter.m(), 1),
                rhs: bias.shape(),
            });
        }
        Ok(Layer { adapter, bias })
    }

    pub fn bias(&self) -> &Matrix {
        &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallNet {
    pub layers: Vec<Layer>,
}

/// How the weight noise is drawn for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Posterior mean, no noise.
    Mean,
    /// One draw of `A` shared by the batch.
    Shared,
    /// Flipout: shared noise with per-example sign flips.
    Flipout,
}

#[derive(Debug, Clone)]
pub enum LayerNoiseKind {
    None,
    Shared(Matrix),
    Flipout(FlipoutMasks),
}

/// Everything random about one forward pass through one layer.
#[derive(Debug, Clone)]
pub struct LayerNoise {
    pub kind: LayerNoiseKind,
    /// Inverted-dropout mask on the adapter input (entries 0 or `1/(1-p)`).
    pub dropout: Option<Matrix>,
    /// Additive perturbation of `B`.
    pub b_noise: Option<Matrix>,
}

impl LayerNoise {
    fn perturbation(&self) -> Perturbation<'_> {
        match &self.kind {
            LayerNoiseKind::None => Perturbation::None,
            LayerNoiseKind::Shared(e) => Perturbation::Shared(e),
            LayerNoiseKind::Flipout(m) => Perturbation::Flipout(m),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetNoise {
    pub layers: Vec<LayerNoise>,
}

/// Options for drawing [`NetNoise`].
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub sampling: Sampling,
    pub dropout_p: f64,
    pub b_noise_std: Option<f64>,
}

impl NoiseSpec {
    pub const MEAN: NoiseSpec = NoiseSpec {
        sampling: Sampling::Mean,
        dropout_p: 0.0,
        b_noise_std: None,
    };
}

impl NetNoise {
    pub fn none(net: &SmallNet) -> Self {
        NetNoise {
            layers: net
                .layers
                .iter()
                .map(|_| LayerNoise {
                    kind: LayerNoiseKind::None,
                    dropout: None,
                    b_noise: None,
                })
                .collect(),
        }
    }

    pub fn sample(net: &SmallNet, batch: usize, spec: NoiseSpec, rng: &mut SeededRng) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|layer| {
                let ad = &layer.adapter;
                let kind = match spec.sampling {
                    Sampling::Mean => LayerNoiseKind::None,
                    Sampling::Shared => {
                        LayerNoiseKind::Shared(rng.gaussian_matrix(ad.rank(), ad.n()))
                    }
                    Sampling::Flipout => {
                        LayerNoiseKind::Flipout(FlipoutMasks::sample(rng, ad.n(), batch, ad.rank()))
                    }
                };
                let dropout = (spec.dropout_p > 0.0).then(|| {
                    let keep = 1.0 / (1.0 - spec.dropout_p);
                    Matrix::from_fn(ad.n(), batch, |_, _| {
                        if rng.bernoulli(spec.dropout_p) {
                            0.0
                        } else {
                            keep
                        }
                    })
                });
                let b_noise = spec
                    .b_noise_std
                    .map(|s| rng.gaussian_matrix(ad.m(), ad.rank()).scale(s));
                LayerNoise {
                    kind,
                    dropout,
                    b_noise,
                }
            })
            .collect();
        NetNoise { layers }
    }
}

struct LayerTrace {
    cache: AdapterCache,
    /// Post-activation output (absent on the last layer).
    activation: Option<Matrix>,
    b_eff: Matrix,
}

/// Forward-pass intermediates needed by [`SmallNet::backward`].
pub struct Trace {
    layers: Vec<LayerTrace>,
}

impl SmallNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for w in layers.windows(2) {
            if w[0].adapter.m() != w[1].adapter.n() {
                return Err(Error::DimensionMismatch {
                    op: "layer chain",
                    lhs: w[0].adapter.w0().shape(),
                    rhs: w[1].adapter.w0().shape(),
                });
            }
        }
        Ok(SmallNet { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].adapter.n()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("nonempty").adapter.m()
    }

    pub fn param_map(&self) -> ParamMap {
        self.layers[0].adapter.param_map
    }

    pub fn set_param_map(&mut self, map: ParamMap) {
        for l in &mut self.layers {
            l.adapter.param_map = map;
        }
    }

    /// Logits for inputs `x` (input_dim x batch).
    pub fn logits(&self, x: &Matrix, noise: &NetNoise) -> Result<Matrix> {
        Ok(self.forward(x, noise)?.0)
    }

    pub fn forward(&self, x: &Matrix, noise: &NetNoise) -> Result<(Matrix, Trace)> {
        if noise.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "noise does not match network depth".into(),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for (idx, (layer, ln)) in self.layers.iter().zip(&noise.layers).enumerate() {
            let ad = &layer.adapter;
            let h_adapter = match &ln.dropout {
                Some(mask) => h.hadamard(mask)?,
                None => h.clone(),
            };
            let b_eff = match &ln.b_noise {
                Some(nb) => ad.b.add(nb)?,
                None => ad.b.clone(),
            };
            let (mut z, cache) = ad.forward_cached(&h, &h_adapter, ln.perturbation(), &b_eff)?;
            for j in 0..z.cols() {
                for i in 0..z.rows() {
                    z[(i, j)] += layer.bias[(i, 0)];
                }
            }
            let activation = if idx < last {
                let a = z.map(f64::tanh);
                h = a.clone();
                Some(a)
            } else {
                h = z;
                None
            };
            traces.push(LayerTrace {
                cache,
                activation,
                b_eff,
            });
        }
        h.check_finite("network forward")?;
        Ok((h, Trace { layers: traces }))
    }

    /// Gradients of a scalar loss with respect to every adapter, given
    /// `d loss / d logits`.
    pub fn backward(
        &self,
        trace: &Trace,
        noise: &NetNoise,
        d_logits: &Matrix,
    ) -> Result<Vec<AdapterGrads>> {
        let mut grads: Vec<Option<AdapterGrads>> = vec![None; self.layers.len()];
        let mut dz = d_logits.clone();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let lt = &trace.layers[idx];
            let ln = &noise.layers[idx];
            if let Some(a) = &lt.activation {
                // tanh' = 1 - tanh^2
                dz = dz.hadamard(&a.map(|v| 1.0 - v * v))?;
            }
            let (g, d_direct, d_adapter) =
                layer
                    .adapter
                    .backward(&lt.cache, &dz, ln.perturbation(), &lt.b_eff)?;
            grads[idx] = Some(g);
            if idx > 0 {
                let d_adapter = match &ln.dropout {
                    Some(mask) => d_adapter.hadamard(mask)?,
                    None => d_adapter,
                };
                dz = d_direct.add(&d_adapter)?;
            }
        }
        Ok(grads
            .into_iter()
            .map(|g| g.expect("all layers visited"))
            .collect())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(NET_MAGIC)?;
        w.write_all(&NET_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u64).to_le_bytes())?;
        for layer in &self.layers {
            layer.adapter.write_to(w)?;
            write_f64s(w, layer.bias.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != NET_MAGIC {
            return Err(Error::Format("bad network magic".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        if u32::from_le_bytes(v) != NET_VERSION {
            return Err(Error::Format("unsupported network version".into()));
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count);
        if count == 0 || count > 64 {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let adapter = VariationalAdapter::read_from(r)?;
            let bias = read_matrix(r, adapter.m(), 1)?;
            layers.push(Layer::new(adapter, bias)?);
        }
        SmallNet::new(layers)
    }
}

/// Column-wise softmax of a classes x batch logit matrix.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for j in 0..logits.cols() {
        let max = (0..logits.rows()).fold(f64::NEG_INFINITY, |a, i| a.max(logits[(i, j)]));
        let mut total = 0.0;
        for i in 0..logits.rows() {
            let e = (logits[(i, j)] - max).exp();
            out[(i, j)] = e;
            total += e;
        }
        for i in 0..logits.rows() {
            out[(i, j)] /= total;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.cols() {
        return Err(Error::DimensionMismatch {
            op: "cross_entropy",
            lhs: logits.shape(),
            rhs: (labels.len(), 1),
        });
    }
    let b = labels.len() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        if y >= logits.rows() {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        let max = (0..logits.rows()).fold(f64::NEG_INFINITY, |a, i| a.max(logits[(i, j)]));
        let lse = max
            + (0..logits.rows())
                .map(|i| (logits[(i, j)] - max).exp())
                .sum::<f64>()
                .ln();
        loss += lse - logits[(y, j)];
        grad[(y, j)] -= 1.0;
    }
    Ok((loss / b, grad.scale(1.0 / b)))
}
