//! From-scratch feed-forward network with manual backpropagation.
//!
//! The architecture family is fixed: dense layers, rectified-linear hidden
//! activations, identity output, mean-squared-error loss. Weights are
//! row-major `(out × in)` matrices. Everything is `f64` and deterministic
//! given the init seed.

pub mod adam;
pub mod io;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use io::{load_model, save_model};
pub use train::{train, BatchSource, ShuffledBatches, TrainConfig, TrainHistory};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense multilayer perceptron: ReLU hidden layers, identity output.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    /// weights[l] has shape (layer_sizes[l+1], layer_sizes[l]).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpModel {
    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}

/// Per-parameter gradients, same shapes as the model they came from.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// He-initialized model: weights ~ Normal(0, sqrt(2/fan_in)), biases zero.
pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least input and output layer sizes, got {:?}",
            layer_sizes
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {:?}",
            layer_sizes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for l in 0..layer_sizes.len() - 1 {
        let fan_in = layer_sizes[l];
        let fan_out = layer_sizes[l + 1];
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std is finite and positive");
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(&mut rng));
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
    })
}

/// Per-column mean and population standard deviation of a data matrix.
pub fn column_stats(data: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let n = data.nrows().max(1) as f64;
    let mut means = Vec::with_capacity(data.ncols());
    let mut stds = Vec::with_capacity(data.ncols());
    for col in data.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means.push(mean);
        stds.push(var.sqrt());
    }
    (means, stds)
}

/// He initialization reparameterized for the data at hand.
///
/// The first layer is transformed so that its pre-activations equal those a
/// plain He-initialized layer would see on standardized inputs: each column
/// of the weight matrix is divided by the input's standard deviation and the
/// bias absorbs the mean. The output layer is scaled to the target standard
/// deviation per component. Nothing outside initialization changes: the
/// model remains a plain network, training and inference are untouched.
///
/// Without this, a map whose outputs span tens of units feeds raw values
/// through O(1) He weights and gradient descent spends its budget
/// rediscovering the data scale. Degenerate stats (zero or non-finite
/// spread) fall back to the plain initialization for that column.
pub fn mlp_init_standardized(
    layer_sizes: &[usize],
    seed: u64,
    input_mean: &[f64],
    input_std: &[f64],
    target_std: &[f64],
) -> Result<MlpModel> {
    let mut model = mlp_init(layer_sizes, seed)?;
    if input_mean.len() != layer_sizes[0] || input_std.len() != layer_sizes[0] {
        return Err(Error::Shape(format!(
            "input stats have {} / {} components, model takes {}",
            input_mean.len(),
            input_std.len(),
            layer_sizes[0]
        )));
    }
    let out_width = *layer_sizes.last().unwrap();
    if target_std.len() != out_width {
        return Err(Error::Shape(format!(
            "target stats have {} components, model emits {out_width}",
            target_std.len()
        )));
    }
    let usable = |s: f64| s.is_finite() && s > 0.0;
    {
        let first = &mut model.weights[0];
        for (c, (&mu, &sigma)) in input_mean.iter().zip(input_std).enumerate() {
            let scale = if usable(sigma) { sigma } else { 1.0 };
            for r in 0..first.nrows() {
                first[[r, c]] /= scale;
                model.biases[0][r] -= first[[r, c]] * mu;
            }
        }
    }
    let last = model.weights.len() - 1;
    for (r, &sigma) in target_std.iter().enumerate() {
        if !usable(sigma) {
            continue;
        }
        for v in model.weights[last].row_mut(r) {
            *v *= sigma;
        }
        model.biases[last][r] *= sigma;
    }
    Ok(model)
}

fn check_input_width(model: &MlpModel, inputs: &ArrayView2<'_, f64>) -> Result<()> {
    if inputs.ncols() != model.input_width() {
        return Err(Error::Shape(format!(
            "input width {} does not match model input width {}",
            inputs.ncols(),
            model.input_width()
        )));
    }
    Ok(())
}

/// Batch forward pass: rows of `inputs` map to rows of the output.
pub fn mlp_forward(model: &MlpModel, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_input_width(model, &inputs)?;
    let mut a = inputs.to_owned();
    let last = model.weights.len() - 1;
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut z = a.dot(&w.t());
        z += b;
        if l < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        a = z;
    }
    Ok(a)
}

/// Forward pass keeping every layer's activations; entry 0 is the input batch,
/// the last entry is the network output.
pub fn mlp_forward_trace(model: &MlpModel, inputs: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
    check_input_width(model, &inputs)?;
    let mut acts = Vec::with_capacity(model.weights.len() + 1);
    acts.push(inputs.to_owned());
    let last = model.weights.len() - 1;
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut z = acts.last().unwrap().dot(&w.t());
        z += b;
        if l < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(z);
    }
    Ok(acts)
}

/// Mean-squared-error loss and its exact parameter gradients for one batch.
///
/// The loss averages squared error over both the batch and the output
/// dimensions, so gradients are comparable across output widths.
pub fn mlp_backward(
    model: &MlpModel,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<(Gradients, f64)> {
    if inputs.nrows() == 0 {
        return Err(Error::Argument("cannot backpropagate an empty batch".into()));
    }
    if inputs.nrows() != targets.nrows() {
        return Err(Error::Shape(format!(
            "batch has {} inputs but {} targets",
            inputs.nrows(),
            targets.nrows()
        )));
    }
    if targets.ncols() != model.output_width() {
        return Err(Error::Shape(format!(
            "target width {} does not match model output width {}",
            targets.ncols(),
            model.output_width()
        )));
    }
    let acts = mlp_forward_trace(model, inputs)?;
    let n = inputs.nrows() as f64;
    let q = model.output_width() as f64;
    let residual = acts.last().unwrap() - &targets;
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / (n * q);

    let layers = model.weights.len();
    let mut grad_w = vec![Array2::zeros((0, 0)); layers];
    let mut grad_b = vec![Array1::zeros(0); layers];
    // delta holds dLoss/dz for the current layer, starting at the output.
    let mut delta = residual * (2.0 / (n * q));
    for l in (0..layers).rev() {
        grad_w[l] = delta.t().dot(&acts[l]);
        grad_b[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut prev = delta.dot(&model.weights[l]);
            // ReLU clamp: activation 0 means the unit passed no signal.
            prev.zip_mut_with(&acts[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
    }
    Ok((
        Gradients {
            weights: grad_w,
            biases: grad_b,
        },
        loss,
    ))
}

/// Mean-squared error of the model over a labeled set.
pub fn mean_squared_error(
    model: &MlpModel,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<f64> {
    let outputs = mlp_forward(model, inputs)?;
    if outputs.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "output shape {:?} does not match target shape {:?}",
            outputs.shape(),
            targets.shape()
        )));
    }
    let n = (outputs.len()).max(1) as f64;
    Ok(outputs
        .iter()
        .zip(targets.iter())
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
        / n)
}
