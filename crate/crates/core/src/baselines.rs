//! Comparison methods: maximum likelihood, weight decay, Monte-Carlo
//! dropout, deep ensembles and Bayes-by-backprop on `A`, plus BLoB itself
//! so that every method goes through one entry point.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{softmax, NetNoise, NoiseSpec, Sampling, SmallNet};
use crate::param_map::ParamMap;
use crate::schedule::{KlMode, ScheduleConfig};
use crate::trainer::{build_net, predict, predict_with, train, TrainConfig, TrainLog, Variant};

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Mle,
    Map,
    McDropout,
    Ensemble,
    Bbb,
    Blob,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Mle,
        Method::Map,
        Method::McDropout,
        Method::Ensemble,
        Method::Bbb,
        Method::Blob,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Method::Mle),
            "map" => Ok(Method::Map),
            "mc_dropout" | "mcd" => Ok(Method::McDropout),
            "ensemble" | "ens" => Ok(Method::Ensemble),
            "bbb" => Ok(Method::Bbb),
            "blob" => Ok(Method::Blob),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::Map => "map",
            Method::McDropout => "mc_dropout",
            Method::Ensemble => "ensemble",
            Method::Bbb => "bbb",
            Method::Blob => "blob",
        }
    }

    /// Whether predictions depend on the number of inference samples.
    pub fn is_sampling(self) -> bool {
        matches!(self, Method::McDropout | Method::Bbb | Method::Blob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSpec {
    #[serde(skip)]
    pub kind: Method,
    /// Schedule settings shared by the KL-trained methods.
    #[serde(skip)]
    pub schedule: ScheduleConfig,
    pub weight_decay: f64,
    pub dropout_p: f64,
    pub n_members: usize,
    pub n_eval_samples: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec {
            kind: Method::Mle,
            schedule: ScheduleConfig::default(),
            weight_decay: 1e-5,
            dropout_p: 0.1,
            n_members: 3,
            n_eval_samples: 10,
        }
    }
}

impl BaselineSpec {
    pub fn new(kind: Method) -> Self {
        BaselineSpec {
            kind,
            ..BaselineSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if self.n_members == 0 {
            return Err(Error::Config("n_members must be positive".into()));
        }
        Ok(())
    }

    /// The training variant this method runs.
    pub fn variant(&self) -> Variant {
        let blob = Variant::blob_with(&self.schedule);
        let det = Variant {
            sampling: Sampling::Mean,
            kl_mode: None,
            learn_std: false,
            ..blob.clone()
        };
        match self.kind {
            Method::Mle | Method::Ensemble => det,
            Method::Map => Variant {
                weight_decay: self.weight_decay,
                ..det
            },
            Method::McDropout => Variant {
                dropout_p: self.dropout_p,
                ..det
            },
            Method::Bbb => Variant {
                param_map: ParamMap::Softplus,
                sampling: Sampling::Shared,
                kl_mode: Some(KlMode::Uniform),
                ..blob
            },
            Method::Blob => blob,
        }
    }
}

/// One or more trained networks for a method.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: BaselineSpec,
    pub members: Vec<SmallNet>,
    pub logs: Vec<TrainLog>,
}

/// Seed of ensemble member `k`; member 0 keeps the run seed.
pub fn member_seed(seed: u64, k: usize) -> u64 {
    if k == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds a fresh network on the backbone of `config.seed` and trains it.
/// Ensemble members differ in adapter initialization, data order and noise.
pub fn train_baseline(
    spec: &BaselineSpec,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    spec.validate()?;
    let variant = spec.variant();
    let n = if spec.kind == Method::Ensemble {
        spec.n_members
    } else {
        1
    };
    let mut members = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    for k in 0..n {
        let cfg = TrainConfig {
            seed: member_seed(config.seed, k),
            ..config.clone()
        };
        let mut net = build_net(
            data.input_dim(),
            data.n_classes,
            &cfg,
            ParamMap::Square,
            config.seed,
        )?;
        if variant.param_map == ParamMap::Softplus {
            // same initial std as the square map, re-expressed for softplus
            for layer in &mut net.layers {
                let ad = &mut layer.adapter;
                let mut rho = Vec::with_capacity(ad.g.as_slice().len());
                for &g in ad.g.as_slice() {
                    rho.push(ParamMap::Softplus.inverse(g * g)?);
                }
                ad.g = Matrix::new(ad.g.rows(), ad.g.cols(), rho)?;
            }
        }
        logs.push(train(&mut net, data, &cfg, &variant)?);
        members.push(net);
    }
    Ok(TrainedModel {
        spec: spec.clone(),
        members,
        logs,
    })
}

/// Class probabilities (one row per column of `x`). `n_samples` applies to
/// the sampling methods; deterministic methods ignore it.
pub fn predict_baseline(
    model: &TrainedModel,
    x: &Matrix,
    n_samples: usize,
    seed: u64,
) -> Result<Matrix> {
    let first = model
        .members
        .first()
        .ok_or_else(|| Error::InvalidArgument("model has no members".into()))?;
    match model.spec.kind {
        Method::Mle | Method::Map => predict(first, x, 0, seed),
        Method::Ensemble => {
            let mut mean = Matrix::zeros(first.n_classes(), x.cols());
            for net in &model.members {
                mean.add_assign(&net.logits(x, &NetNoise::none(net))?)?;
            }
            Ok(softmax(&mean.scale(1.0 / model.members.len() as f64)).transpose())
        }
        Method::McDropout => {
            let spec = NoiseSpec {
                dropout_p: model.spec.dropout_p,
                ..NoiseSpec::MEAN
            };
            predict_with(first, x, n_samples, spec, seed)
        }
        Method::Bbb | Method::Blob => predict(first, x, n_samples, seed),
    }
}
