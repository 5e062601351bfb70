//! Bayesian low-rank adaptation by backpropagation on small frozen-backbone
//! networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod adapter;
pub mod baselines;
pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod kl;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod param_map;
pub mod sampling;
pub mod schedule;
pub mod trainer;

pub use adapter::{FlipoutMasks, VariationalAdapter};
pub use baselines::{BaselineSpec, Method};
pub use config::BenchConfig;
pub use data::{generate_task, Dataset, TaskSpec};
pub use error::{Error, Result};
pub use kl::PriorSpec;
pub use matrix::Matrix;
pub use metrics::CalibrationReport;
pub use net::SmallNet;
pub use param_map::ParamMap;
pub use sampling::SeededRng;
pub use schedule::KlSchedule;
pub use trainer::{TrainConfig, Variant};
