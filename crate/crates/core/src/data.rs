//! Synthetic classification tasks with controllable distribution shift.
//!
//! Every generator places its class structure in the first two input
//! dimensions; remaining dimensions are pure noise. Shifts apply only to the
//! test split:
//!
//! | generator        | small                | large                |
//! |------------------|----------------------|----------------------|
//! | `gauss_blobs`    | rotate 15 degrees    | rotate 45 degrees    |
//! | `two_moons_like` | rotate 15 degrees    | rotate 45 degrees    |
//! | `ring_vs_disk`   | translate 0.25 units | translate 0.75 units |
//!
//! Rotations act in the plane of the first two dimensions about the origin.
//! Translations move every test point along the first dimension, measured in
//! units of the class separation (the gap between disk edge and ring).

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sampling::SeededRng;

const STREAM_TRAIN: u64 = 11;
const STREAM_TEST: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    GaussBlobs,
    TwoMoonsLike,
    RingVsDisk,
}

impl Generator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gauss_blobs" => Ok(Generator::GaussBlobs),
            "two_moons_like" => Ok(Generator::TwoMoonsLike),
            "ring_vs_disk" => Ok(Generator::RingVsDisk),
            other => Err(Error::Config(format!("unknown generator `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Generator::GaussBlobs => "gauss_blobs",
            Generator::TwoMoonsLike => "two_moons_like",
            Generator::RingVsDisk => "ring_vs_disk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    None,
    Small,
    Large,
}

impl Shift {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Shift::None),
            "small" => Ok(Shift::Small),
            "large" => Ok(Shift::Large),
            other => Err(Error::Config(format!("unknown shift `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shift::None => "none",
            Shift::Small => "small",
            Shift::Large => "large",
        }
    }

    fn level(self) -> usize {
        match self {
            Shift::None => 0,
            Shift::Small => 1,
            Shift::Large => 2,
        }
    }
}

const ROTATION_DEG: [f64; 3] = [0.0, 15.0, 45.0];
const TRANSLATION: [f64; 3] = [0.0, 0.25, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub generator: Generator,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    pub noise_scale: f64,
    pub shift: Shift,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            generator: Generator::GaussBlobs,
            n_train: 500,
            n_test: 2000,
            n_classes: 2,
            input_dim: 6,
            noise_scale: 0.8,
            shift: Shift::None,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument(
                "n_train and n_test must be positive".into(),
            ));
        }
        if self.input_dim < 2 {
            return Err(Error::InvalidArgument(
                "input_dim must be at least 2".into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.generator != Generator::GaussBlobs && self.n_classes != 2 {
            return Err(Error::InvalidArgument(format!(
                "{} is a 2-class generator",
                self.generator.name()
            )));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::InvalidArgument(
                "noise_scale must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Human-readable description of the shift transform on the test split.
    pub fn shift_description(&self) -> String {
        let lvl = self.shift.level();
        if lvl == 0 {
            return "none".into();
        }
        match self.generator {
            Generator::RingVsDisk => {
                format!("translate {} separation units along x0", TRANSLATION[lvl])
            }
            _ => format!("rotate {} degrees in the (x0, x1) plane", ROTATION_DEG[lvl]),
        }
    }
}

/// Examples as rows of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "dataset",
                lhs: x.shape(),
                rhs: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        Ok(Dataset {
            x,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    /// The selected examples as columns (input_dim x batch) plus their labels.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let d = self.input_dim();
        let cols = Matrix::from_fn(d, indices.len(), |i, j| self.x[(indices[j], i)]);
        (cols, indices.iter().map(|&k| self.labels[k]).collect())
    }

    /// All inputs as columns.
    pub fn columns(&self) -> Matrix {
        self.x.transpose()
    }

    /// CSV with columns `x0..x{d-1},label`, values in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.input_dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        out.write_record(&header).map_err(csv_err)?;
        for (i, &y) in self.labels.iter().enumerate() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Train and test splits from independent random streams.
pub fn generate_task(spec: &TaskSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut train_rng = SeededRng::with_stream(seed, STREAM_TRAIN);
    let mut test_rng = SeededRng::with_stream(seed, STREAM_TEST);
    let train = draw(spec, spec.n_train, &mut train_rng)?;
    let mut test = draw(spec, spec.n_test, &mut test_rng)?;
    apply_shift(spec, &mut test);
    Ok((train, test))
}

fn draw(spec: &TaskSpec, n: usize, rng: &mut SeededRng) -> Result<Dataset> {
    let d = spec.input_dim;
    let s = spec.noise_scale;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.index(spec.n_classes);
        let (x0, x1) = match spec.generator {
            Generator::GaussBlobs => {
                let angle = 2.0 * PI * y as f64 / spec.n_classes as f64;
                (
                    angle.cos() + s * rng.gaussian(),
                    angle.sin() + s * rng.gaussian(),
                )
            }
            Generator::TwoMoonsLike => {
                let t = rng.uniform(0.0, PI);
                let (cx, cy) = if y == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                // centered on the origin so rotations act about the data mean
                (
                    cx - 0.5 + s * rng.gaussian(),
                    cy - 0.25 + s * rng.gaussian(),
                )
            }
            Generator::RingVsDisk => {
                let angle = rng.uniform(0.0, 2.0 * PI);
                // area-uniform radius within the disk, uniform across the ring band
                let radius = if y == 0 {
                    rng.uniform(0.0, 1.0).sqrt()
                } else {
                    rng.uniform(1.5, 2.0)
                };
                (
                    radius * angle.cos() + s * rng.gaussian(),
                    radius * angle.sin() + s * rng.gaussian(),
                )
            }
        };
        data.push(x0);
        data.push(x1);
        for _ in 2..d {
            data.push(s * rng.gaussian());
        }
        labels.push(y);
    }
    Dataset::new(Matrix::new(n, d, data)?, labels, spec.n_classes)
}

const RING_GAP: f64 = 0.5;

fn apply_shift(spec: &TaskSpec, data: &mut Dataset) {
    let lvl = spec.shift.level();
    if lvl == 0 {
        return;
    }
    let n = data.len();
    match spec.generator {
        Generator::RingVsDisk => {
            let dx = TRANSLATION[lvl] * RING_GAP;
            for i in 0..n {
                data.x.as_mut_slice()[i * spec.input_dim] += dx;
            }
        }
        _ => {
            let (sin, cos) = ROTATION_DEG[lvl].to_radians().sin_cos();
            let d = spec.input_dim;
            let xs = data.x.as_mut_slice();
            for i in 0..n {
                let (a, b) = (xs[i * d], xs[i * d + 1]);
                xs[i * d] = cos * a - sin * b;
                xs[i * d + 1] = sin * a + cos * b;
            }
        }
    }
}
