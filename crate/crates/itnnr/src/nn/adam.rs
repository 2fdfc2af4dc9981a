//! Adam parameter updates with bias correction.

use ndarray::{Array, Array1, Array2, Dimension, Zip};

use super::{Gradients, MlpModel};
use crate::error::{Error, Result};

/// Optimizer state: first/second moment estimates per parameter tensor.
///
/// `learning_rate` is mutated only by the plateau schedule in the train loop;
/// the Adam constants stay fixed for the life of the state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    moment1_w: Vec<Array2<f64>>,
    moment2_w: Vec<Array2<f64>>,
    moment1_b: Vec<Array1<f64>>,
    moment2_b: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(model: &MlpModel, learning_rate: f64) -> Self {
        let zeros_w: Vec<Array2<f64>> = model
            .weights
            .iter()
            .map(|w| Array2::zeros(w.raw_dim()))
            .collect();
        let zeros_b: Vec<Array1<f64>> = model
            .biases
            .iter()
            .map(|b| Array1::zeros(b.raw_dim()))
            .collect();
        AdamState {
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moment1_w: zeros_w.clone(),
            moment2_w: zeros_w,
            moment1_b: zeros_b.clone(),
            moment2_b: zeros_b,
        }
    }
}

/// One Adam update in place. Non-finite gradients leave model and state
/// untouched and report a numeric error.
pub fn adam_step(model: &mut MlpModel, state: &mut AdamState, grads: &Gradients) -> Result<()> {
    if grads.weights.len() != model.weights.len() || grads.biases.len() != model.biases.len() {
        return Err(Error::Shape(format!(
            "gradient layer count {}/{} does not match model {}/{}",
            grads.weights.len(),
            grads.biases.len(),
            model.weights.len(),
            model.biases.len()
        )));
    }
    for (l, (gw, w)) in grads.weights.iter().zip(&model.weights).enumerate() {
        if gw.raw_dim() != w.raw_dim() {
            return Err(Error::Shape(format!(
                "weight gradient {l} has shape {:?}, expected {:?}",
                gw.shape(),
                w.shape()
            )));
        }
    }
    for (l, (gb, b)) in grads.biases.iter().zip(&model.biases).enumerate() {
        if gb.raw_dim() != b.raw_dim() {
            return Err(Error::Shape(format!(
                "bias gradient {l} has length {}, expected {}",
                gb.len(),
                b.len()
            )));
        }
    }
    let finite = grads
        .weights
        .iter()
        .flat_map(|g| g.iter())
        .chain(grads.biases.iter().flat_map(|g| g.iter()))
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Numeric {
            message: "non-finite gradient encountered".into(),
            last_finite_epoch: None,
        });
    }

    state.step_count += 1;
    let constants = UpdateConstants {
        beta1: state.beta1,
        beta2: state.beta2,
        epsilon: state.epsilon,
        learning_rate: state.learning_rate,
        correction1: 1.0 - state.beta1.powi(state.step_count as i32),
        correction2: 1.0 - state.beta2.powi(state.step_count as i32),
    };
    for l in 0..model.weights.len() {
        update_tensor(
            &mut model.weights[l],
            &mut state.moment1_w[l],
            &mut state.moment2_w[l],
            &grads.weights[l],
            &constants,
        );
        update_tensor(
            &mut model.biases[l],
            &mut state.moment1_b[l],
            &mut state.moment2_b[l],
            &grads.biases[l],
            &constants,
        );
    }
    Ok(())
}

struct UpdateConstants {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    learning_rate: f64,
    correction1: f64,
    correction2: f64,
}

// Zip keeps the update correct for any memory layout the gradient arrays
// arrive in (matrix products of transposed views can come back column-major).
fn update_tensor<D: Dimension>(
    params: &mut Array<f64, D>,
    moment1: &mut Array<f64, D>,
    moment2: &mut Array<f64, D>,
    grads: &Array<f64, D>,
    c: &UpdateConstants,
) {
    Zip::from(params)
        .and(moment1)
        .and(moment2)
        .and(grads)
        .for_each(|p, m, v, g| {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / c.correction1;
            let v_hat = *v / c.correction2;
            *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        });
}
