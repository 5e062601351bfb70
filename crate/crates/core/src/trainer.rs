//! The BLoB training loop.
//!
//! Each step draws a minibatch, runs `K` noisy forward passes, and splits
//! the gradient in two: the likelihood gradient updates `M`, `G` and `B`
//! through AdamW, while the weighted KL gradient updates `M` and `G` through
//! plain SGD. Both learning rates follow the same linear warm-up/decay.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterGrads, VariationalAdapter};
use crate::data::{csv_err, Dataset};
use crate::error::{Error, Result};
use crate::kl::{kl_from_std, kl_grad_std, PriorSpec};
use crate::matrix::Matrix;
use crate::net::{cross_entropy, softmax, Layer, NetNoise, NoiseSpec, Sampling, SmallNet};
use crate::optim::{sgd_step, AdamW, LinearSchedule};
use crate::param_map::ParamMap;
use crate::sampling::SeededRng;
use crate::schedule::{AfterWarmup, KlMode, KlSchedule, ScheduleConfig};

const STREAM_BACKBONE: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_ORDER: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_PREDICT: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub sigma_p: f64,
    /// Scale of the `G` initialization.
    pub epsilon: f64,
    pub k_train_samples: usize,
    pub lr_likelihood: f64,
    pub lr_kl: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub warmup_ratio: f64,
    pub hidden: usize,
    pub rank: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma_p: 0.2,
            epsilon: 0.05,
            k_train_samples: 1,
            lr_likelihood: 5e-3,
            lr_kl: 2e-3,
            steps: 2000,
            batch_size: 32,
            seed: 0,
            warmup_ratio: 0.06,
            hidden: 32,
            rank: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_p", self.sigma_p),
            ("epsilon", self.epsilon),
            ("lr_likelihood", self.lr_likelihood),
            ("lr_kl", self.lr_kl),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.k_train_samples == 0 || self.batch_size == 0 || self.hidden == 0 || self.rank == 0 {
            return Err(Error::Config(
                "k_train_samples, batch_size, hidden and rank must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("warmup_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<PriorSpec> {
        PriorSpec::new(self.sigma_p)
    }
}

/// Everything that distinguishes one training method from another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub param_map: ParamMap,
    /// Noise used in training forward passes.
    pub sampling: Sampling,
    /// `None` turns the KL term off.
    pub kl_mode: Option<KlMode>,
    pub after_warmup: AfterWarmup,
    pub rescale: bool,
    pub gamma: f64,
    /// Whether `G` is trained at all.
    pub learn_std: bool,
    pub dropout_p: f64,
    /// L2 penalty `weight_decay / 2 * (|M|^2 + |B|^2)` added to the likelihood term.
    pub weight_decay: f64,
    /// Std of additive noise on `B` during training.
    pub b_noise_std: Option<f64>,
}

impl Variant {
    pub fn blob() -> Self {
        Variant::blob_with(&ScheduleConfig::default())
    }

    pub fn blob_with(schedule: &ScheduleConfig) -> Self {
        Variant {
            param_map: ParamMap::Square,
            sampling: Sampling::Flipout,
            kl_mode: Some(schedule.mode),
            after_warmup: schedule.after_warmup,
            rescale: schedule.rescale,
            gamma: schedule.gamma,
            learn_std: true,
            dropout_p: 0.0,
            weight_decay: 0.0,
            b_noise_std: None,
        }
    }

    /// Deterministic low-rank fine-tuning on cross-entropy alone.
    pub fn deterministic() -> Self {
        Variant {
            sampling: Sampling::Mean,
            kl_mode: None,
            learn_std: false,
            ..Variant::blob()
        }
    }

    pub fn is_bayesian(&self) -> bool {
        self.kl_mode.is_some() || self.sampling != Sampling::Mean
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            sampling: self.sampling,
            dropout_p: self.dropout_p,
            b_noise_std: self.b_noise_std,
        }
    }

    pub fn schedule(&self, dataset_len: usize, config: &TrainConfig) -> Result<Option<KlSchedule>> {
        self.kl_mode
            .map(|mode| {
                Ok(KlSchedule::new(
                    dataset_len,
                    config.batch_size,
                    mode,
                    self.gamma,
                    self.rescale,
                )?
                .after_warmup(self.after_warmup))
            })
            .transpose()
    }
}

/// `G ~ U(eps/sqrt(2), eps)`, `M ~ U(-sqrt(6/n), sqrt(6/n))`, `B = 0`.
pub fn init_adapter(
    w0: Matrix,
    r: usize,
    config: &TrainConfig,
    map: ParamMap,
    rng: &mut SeededRng,
) -> Result<VariationalAdapter> {
    let (m, n) = w0.shape();
    if r == 0 || r >= m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} must satisfy 0 < r < min({m}, {n})"
        )));
    }
    let eps = config.epsilon;
    let g = rng.uniform_matrix(r, n, eps / 2f64.sqrt(), eps);
    let bound = (6.0 / n as f64).sqrt();
    let mean_a = rng.uniform_matrix(r, n, -bound, bound);
    VariationalAdapter::with_map(w0, Matrix::zeros(m, r), mean_a, g, map)
}

/// A two-layer backbone `input -> hidden -> classes` with random frozen
/// weights, and an adapter of rank `min(config.rank, min(m, n) - 1)` on each
/// layer. The backbone depends only on `backbone_seed`.
pub fn build_net(
    input_dim: usize,
    n_classes: usize,
    config: &TrainConfig,
    map: ParamMap,
    backbone_seed: u64,
) -> Result<SmallNet> {
    config.validate()?;
    let mut bb = SeededRng::with_stream(backbone_seed, STREAM_BACKBONE);
    let mut init = SeededRng::with_stream(config.seed, STREAM_INIT);
    let dims = [(config.hidden, input_dim), (n_classes, config.hidden)];
    let mut layers = Vec::with_capacity(dims.len());
    for (m, n) in dims {
        if m.min(n) < 2 {
            return Err(Error::InvalidArgument(format!(
                "layer {m}x{n} too small for a low-rank adapter"
            )));
        }
        let w0 = bb.gaussian_matrix(m, n).scale(1.0 / (n as f64).sqrt());
        let bias = bb.gaussian_matrix(m, 1).scale(0.1);
        let r = config.rank.min(m.min(n) - 1);
        layers.push(Layer::new(
            init_adapter(w0, r, config, map, &mut init)?,
            bias,
        )?);
    }
    SmallNet::new(layers)
}

/// One minibatch objective split into its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// `likelihood + kl_weight * kl`.
    pub loss: f64,
    /// Mean cross-entropy over the batch and the `K` samples (plus any L2 penalty).
    pub likelihood: f64,
    /// Closed-form KL summed over layers.
    pub kl: f64,
    pub kl_weight: f64,
    /// Accuracy of the first sample's predictions on the batch.
    pub train_acc: f64,
}

#[derive(Debug, Clone)]
pub struct ElboGrads {
    pub likelihood: Vec<AdapterGrads>,
    /// Unweighted KL gradient; the `b` entries are zero.
    pub kl: Vec<AdapterGrads>,
}

impl ElboGrads {
    /// `likelihood + kl_weight * kl`.
    pub fn total(&self, kl_weight: f64) -> Result<Vec<AdapterGrads>> {
        let mut out = self.likelihood.clone();
        for (o, k) in out.iter_mut().zip(&self.kl) {
            o.accumulate(k, kl_weight)?;
        }
        Ok(out)
    }
}

/// KL of every layer's posterior against the prior, and its gradient.
pub fn network_kl(net: &SmallNet, prior: PriorSpec) -> Result<(f64, Vec<AdapterGrads>)> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(net.layers.len());
    for (idx, layer) in net.layers.iter().enumerate() {
        let ad = &layer.adapter;
        if let Some(pos) = ad.g.as_slice().iter().position(|&v| v == 0.0) {
            return Err(Error::DegeneratePosterior {
                row: pos / ad.g.cols(),
                col: pos % ad.g.cols(),
            });
        }
        let omega = ad.omega();
        let kl = kl_from_std(&ad.mean_a, &omega, prior).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(format!("kl term of layer {idx}")),
            other => other,
        })?;
        total += kl.full;
        let (d_mean, d_omega) = kl_grad_std(&ad.mean_a, &omega, prior)?;
        grads.push(AdapterGrads {
            b: Matrix::zeros(ad.b.rows(), ad.b.cols()),
            mean_a: d_mean,
            g: ad.std_grad(&d_omega),
        });
    }
    Ok((total, grads))
}

/// The objective and its gradients for fixed noise draws, one per sample.
pub fn elbo_with_noise(
    net: &SmallNet,
    x: &Matrix,
    labels: &[usize],
    noises: &[NetNoise],
    config: &TrainConfig,
    variant: &Variant,
    kl_weight: f64,
) -> Result<(ElboTerms, ElboGrads)> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if noises.is_empty() {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(0.0..=1.0).contains(&kl_weight) && variant.kl_mode != Some(KlMode::BlobAscendingLiteral) {
        return Err(Error::InvalidArgument(format!(
            "kl_weight {kl_weight} outside [0, 1]"
        )));
    }
    let k = noises.len() as f64;
    let mut lik_grads: Vec<AdapterGrads> = net
        .layers
        .iter()
        .map(|l| AdapterGrads::zeros_like(&l.adapter))
        .collect();
    let mut likelihood = 0.0;
    let mut train_acc = 0.0;
    for (s, noise) in noises.iter().enumerate() {
        let (logits, trace) = net.forward(x, noise)?;
        let (ce, d_logits) = cross_entropy(&logits, labels)?;
        if !ce.is_finite() {
            return Err(Error::NonFinite("likelihood term".into()));
        }
        likelihood += ce / k;
        if s == 0 {
            train_acc = batch_accuracy(&logits, labels);
        }
        let grads = net.backward(&trace, noise, &d_logits)?;
        for (acc, g) in lik_grads.iter_mut().zip(&grads) {
            acc.accumulate(g, 1.0 / k)?;
        }
    }
    if variant.weight_decay > 0.0 {
        for (acc, layer) in lik_grads.iter_mut().zip(&net.layers) {
            let ad = &layer.adapter;
            likelihood +=
                0.5 * variant.weight_decay * (ad.mean_a.frobenius_sq() + ad.b.frobenius_sq());
            acc.mean_a.axpy(variant.weight_decay, &ad.mean_a)?;
            acc.b.axpy(variant.weight_decay, &ad.b)?;
        }
    }
    if !variant.learn_std {
        for g in &mut lik_grads {
            g.g = Matrix::zeros(g.g.rows(), g.g.cols());
        }
    }
    let (kl, kl_grads) = if variant.kl_mode.is_some() {
        network_kl(net, config.prior()?)?
    } else {
        let zeros = net
            .layers
            .iter()
            .map(|l| AdapterGrads::zeros_like(&l.adapter))
            .collect();
        (0.0, zeros)
    };
    let loss = likelihood + kl_weight * kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }
    Ok((
        ElboTerms {
            loss,
            likelihood,
            kl,
            kl_weight,
            train_acc,
        },
        ElboGrads {
            likelihood: lik_grads,
            kl: kl_grads,
        },
    ))
}

/// Draws `K` noise samples from `rng` and evaluates the objective.
pub fn elbo_minibatch(
    net: &SmallNet,
    x: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
    variant: &Variant,
    kl_weight: f64,
    rng: &mut SeededRng,
) -> Result<(ElboTerms, ElboGrads)> {
    let noises: Vec<NetNoise> = (0..config.k_train_samples)
        .map(|_| NetNoise::sample(net, labels.len(), variant.noise_spec(), rng))
        .collect();
    elbo_with_noise(net, x, labels, &noises, config, variant, kl_weight)
}

fn batch_accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(j, &y)| argmax((0..logits.rows()).map(|i| logits[(i, j)])) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub likelihood_loss: f64,
    pub kl_value: f64,
    pub kl_weight: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Endless reshuffled pass over the dataset indices.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    rng: SeededRng,
}

impl BatchStream {
    fn new(len: usize, rng: SeededRng) -> Self {
        let mut s = BatchStream {
            order: (0..len).collect(),
            cursor: len,
            rng,
        };
        s.reshuffle_if_done();
        s
    }

    fn reshuffle_if_done(&mut self) {
        if self.cursor == self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            out.push(self.order[self.cursor]);
            self.cursor += 1;
            self.reshuffle_if_done();
        }
        out
    }
}

/// Trains the adapters of `net` in place. The KL schedule comes from the
/// variant; see [`train_with_schedule`] to supply one directly.
pub fn train(
    net: &mut SmallNet,
    data: &Dataset,
    config: &TrainConfig,
    variant: &Variant,
) -> Result<TrainLog> {
    let schedule = variant.schedule(data.len(), config)?;
    train_with_schedule(net, data, config, variant, schedule.as_ref())
}

pub fn train_with_schedule(
    net: &mut SmallNet,
    data: &Dataset,
    config: &TrainConfig,
    variant: &Variant,
    schedule: Option<&KlSchedule>,
) -> Result<TrainLog> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if data.input_dim() != net.input_dim() || data.n_classes != net.n_classes() {
        return Err(Error::DimensionMismatch {
            op: "train data",
            lhs: (net.input_dim(), net.n_classes()),
            rhs: (data.input_dim(), data.n_classes),
        });
    }
    if variant.kl_mode.is_some() != schedule.is_some() {
        return Err(Error::Config(
            "a KL schedule is required exactly when the KL term is on".into(),
        ));
    }
    net.set_param_map(variant.param_map);
    let lr = LinearSchedule::new(config.steps, config.warmup_ratio);
    let mut batches = BatchStream::new(
        data.len(),
        SeededRng::with_stream(config.seed, STREAM_ORDER),
    );
    let mut noise_rng = SeededRng::with_stream(config.seed, STREAM_NOISE);

    let mut shapes = Vec::new();
    for l in &net.layers {
        shapes.push(l.adapter.b.shape());
        shapes.push(l.adapter.mean_a.shape());
        if variant.learn_std {
            shapes.push(l.adapter.g.shape());
        }
    }
    let mut adam = AdamW::new(&shapes, 0.0);
    let mut log = TrainLog::default();

    for step in 1..=config.steps {
        let kl_weight = schedule.map_or(0.0, |s| s.kl_weight_at(step));
        let idx = batches.next_batch(config.batch_size.min(data.len()));
        let (x, y) = data.batch(&idx);
        let (terms, grads) =
            elbo_minibatch(net, &x, &y, config, variant, kl_weight, &mut noise_rng).map_err(
                |e| match e {
                    Error::NonFinite(component) => Error::Diverged { step, component },
                    other => other,
                },
            )?;
        let factor = lr.factor(step);

        {
            let mut params: Vec<&mut Matrix> = Vec::with_capacity(shapes.len());
            let mut gs: Vec<&Matrix> = Vec::with_capacity(shapes.len());
            for (layer, g) in net.layers.iter_mut().zip(&grads.likelihood) {
                let ad = &mut layer.adapter;
                params.push(&mut ad.b);
                gs.push(&g.b);
                params.push(&mut ad.mean_a);
                gs.push(&g.mean_a);
                if variant.learn_std {
                    params.push(&mut ad.g);
                    gs.push(&g.g);
                }
            }
            adam.step(&mut params, &gs, config.lr_likelihood * factor)?;
        }
        if variant.kl_mode.is_some() && kl_weight > 0.0 {
            let kl_lr = config.lr_kl * factor * kl_weight;
            for (layer, g) in net.layers.iter_mut().zip(&grads.kl) {
                sgd_step(&mut layer.adapter.mean_a, &g.mean_a, kl_lr)?;
                if variant.learn_std {
                    sgd_step(&mut layer.adapter.g, &g.g, kl_lr)?;
                }
            }
        }
        for (li, layer) in net.layers.iter().enumerate() {
            let ad = &layer.adapter;
            for (name, m) in [("B", &ad.b), ("M", &ad.mean_a), ("G", &ad.g)] {
                if !m.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        component: format!("{name} of layer {li}"),
                    });
                }
            }
        }
        log.records.push(StepRecord {
            step,
            likelihood_loss: terms.likelihood,
            kl_value: terms.kl,
            kl_weight,
            train_acc: terms.train_acc,
        });
    }
    Ok(log)
}

/// Class probabilities, one row per input column of `x`. `n_samples = 0`
/// uses the posterior mean; otherwise the softmax outputs of `n_samples`
/// independent weight draws are averaged.
pub fn predict(net: &SmallNet, x: &Matrix, n_samples: usize, seed: u64) -> Result<Matrix> {
    let spec = NoiseSpec {
        sampling: Sampling::Shared,
        ..NoiseSpec::MEAN
    };
    predict_with(net, x, n_samples, spec, seed)
}

/// As [`predict`], with explicit control over the noise of each pass.
pub fn predict_with(
    net: &SmallNet,
    x: &Matrix,
    n_samples: usize,
    spec: NoiseSpec,
    seed: u64,
) -> Result<Matrix> {
    if n_samples == 0 {
        return Ok(softmax(&net.logits(x, &NetNoise::none(net))?).transpose());
    }
    let mut rng = SeededRng::with_stream(seed, STREAM_PREDICT);
    let mut acc = Matrix::zeros(net.n_classes(), x.cols());
    for _ in 0..n_samples {
        let noise = NetNoise::sample(net, x.cols(), spec, &mut rng);
        acc.add_assign(&softmax(&net.logits(x, &noise)?))?;
    }
    Ok(acc.scale(1.0 / n_samples as f64).transpose())
}
