//! Feedforward autoencoder written from scratch.
//!
//! Hidden layers use a configurable squashing activation, the output layer is
//! linear. Inputs are z-scored with statistics fitted on the training split
//! before they reach the network; [`AutoencoderModel::forward`] expects
//! already-normalized input while [`AutoencoderModel::score`] normalizes.

mod file;
mod train;

pub use file::{load_model, save_model, ModelFile, MODEL_FORMAT, MODEL_VERSION};
pub use train::{train, tune_learning_rate, EarlyStopper, EpochRecord, TrainConfig, TrainOutcome};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch} (Opt_DS MSE {opt_mse:e} vs initial {initial:e}); try a smaller lr_n than {lr_n}")]
    Diverged {
        epoch: usize,
        opt_mse: f64,
        initial: f64,
        lr_n: f64,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation) -> Result<Self, NnError> {
        let arch = Self {
            layer_sizes,
            hidden_activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Encoder widths at 3/4, 1/2, 1/3 and 1/4 of the input, mirrored.
    /// For 115 inputs: 115-86-58-38-29-38-58-86-115.
    pub fn default_for(input_dim: usize) -> Self {
        let mut enc = vec![input_dim];
        for ratio in [0.75, 0.5, 0.33, 0.25] {
            let w = ((input_dim as f64 * ratio).round() as usize).max(1);
            if w < *enc.last().unwrap() {
                enc.push(w);
            }
        }
        let mut sizes = enc.clone();
        sizes.extend(enc.iter().rev().skip(1));
        Self {
            layer_sizes: sizes,
            hidden_activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let s = &self.layer_sizes;
        let bad = |m: &str| Err(NnError::InvalidArchitecture(m.to_string()));
        if s.len() < 3 {
            return bad("need at least three layers");
        }
        if s.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if s.iter().zip(s.iter().rev()).any(|(a, b)| a != b) {
            return bad("layer sizes must be symmetric about the bottleneck");
        }
        if self.bottleneck() >= s[0] {
            return bad("bottleneck must be narrower than the input");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn bottleneck(&self) -> usize {
        *self.layer_sizes.iter().min().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape `(out, in)`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Standard deviations below this are treated as zero variance.
    pub const MIN_STD: f64 = 1e-12;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation per column; zero-variance
    /// columns get a standard deviation of 1.
    pub fn fit(data: &Array2<f64>) -> Self {
        let n = data.nrows() as f64;
        let mean: Vec<f64> = data.mean_axis(Axis(0)).expect("non-empty data").to_vec();
        let std = data
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(col, m)| {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s < Self::MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn normalize_rows(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub architecture: Architecture,
    pub layers: Vec<Dense>,
    pub normalizer: Normalizer,
}

/// Per-layer gradients of the batch-mean reconstruction MSE.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Glorot-uniform weights, zero biases, identity normalizer.
pub fn init_model(arch: &Architecture, rng: &mut SimRng) -> Result<AutoencoderModel, NnError> {
    arch.validate()?;
    let layers = arch
        .layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.uniform_range(-a, a));
            Dense {
                weights,
                biases: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(AutoencoderModel {
        architecture: arch.clone(),
        layers,
        normalizer: Normalizer::identity(arch.input_dim()),
    })
}

/// Mean squared difference, `(1/d) Σ (xᵢ − x̂ᵢ)²`.
pub fn mse(x: &[f64], xhat: &[f64]) -> Result<f64, NnError> {
    if x.len() != xhat.len() {
        return Err(NnError::Dimension {
            expected: x.len(),
            found: xhat.len(),
        });
    }
    if x.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    Ok(x.iter().zip(xhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

impl AutoencoderModel {
    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim()
    }

    fn check_dim(&self, found: usize) -> Result<(), NnError> {
        if found != self.input_dim() {
            return Err(NnError::Dimension {
                expected: self.input_dim(),
                found,
            });
        }
        Ok(())
    }

    fn forward_view(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let act = self.architecture.hidden_activation;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&a) + &layer.biases;
            if i != last {
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        a
    }

    /// Reconstruction of an already-normalized input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_dim(x.len())?;
        Ok(self.forward_view(ArrayView1::from(x)).to_vec())
    }

    /// Reconstruction MSE of an already-normalized input.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64, NnError> {
        let xhat = self.forward(x)?;
        mse(x, &xhat)
    }

    /// Normalizes raw features, then returns the reconstruction MSE.
    pub fn score(&self, raw: &[f64]) -> Result<f64, NnError> {
        self.check_dim(raw.len())?;
        self.reconstruction_error(&self.normalizer.normalize(raw))
    }

    /// Per-row reconstruction MSE of normalized rows. Each row goes through
    /// the same path as [`Self::reconstruction_error`], so results do not
    /// depend on batch composition or thread scheduling.
    pub fn reconstruction_errors(&self, rows: &Array2<f64>) -> Result<Vec<f64>, NnError> {
        self.check_dim(rows.ncols())?;
        Ok((0..rows.nrows())
            .into_par_iter()
            .map(|i| {
                let row = rows.row(i);
                let xhat = self.forward_view(row);
                let d = row.len() as f64;
                row.iter().zip(xhat.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d
            })
            .collect())
    }

    /// Per-row scores of raw (unnormalized) rows.
    pub fn score_rows(&self, raw: &Array2<f64>) -> Result<Vec<f64>, NnError> {
        self.check_dim(raw.ncols())?;
        self.reconstruction_errors(&self.normalizer.normalize_rows(raw))
    }

    /// Batch forward pass keeping every layer's activation; `acts[0]` is the input.
    fn forward_batch(&self, batch: &Array2<f64>) -> Vec<Array2<f64>> {
        let act = self.architecture.hidden_activation;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights.t()) + &layer.biases;
            if i != last {
                z.mapv_inplace(|v| act.apply(v));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean over rows of the per-row MSE, computed with the batch path.
    pub fn batch_loss(&self, batch: &Array2<f64>) -> Result<f64, NnError> {
        self.check_dim(batch.ncols())?;
        if batch.nrows() == 0 {
            return Err(NnError::EmptyBatch);
        }
        let out = self.forward_batch(batch).pop().unwrap();
        let diff = out - batch;
        Ok(diff.mapv(|v| v * v).sum() / (batch.nrows() * batch.ncols()) as f64)
    }

    /// Analytic gradients of [`Self::batch_loss`] by backpropagation.
    pub fn backward(&self, batch: &Array2<f64>) -> Result<Gradients, NnError> {
        self.check_dim(batch.ncols())?;
        if batch.nrows() == 0 {
            return Err(NnError::EmptyBatch);
        }
        let act = self.architecture.hidden_activation;
        let acts = self.forward_batch(batch);
        let n_layers = self.layers.len();
        let scale = 2.0 / (batch.nrows() * batch.ncols()) as f64;
        let mut delta = (&acts[n_layers] - batch) * scale;

        let mut weights = vec![Array2::zeros((0, 0)); n_layers];
        let mut biases = vec![Array1::zeros(0); n_layers];
        for l in (0..n_layers).rev() {
            weights[l] = delta.t().dot(&acts[l]);
            biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights);
                back.zip_mut_with(&acts[l], |d, &a| *d *= act.derivative_from_output(a));
                delta = back;
            }
        }
        Ok(Gradients { weights, biases })
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            layer.weights.scaled_add(-lr, gw);
            layer.biases.scaled_add(-lr, gb);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }
}
