//! Tiny fully-connected network with analytic gradients.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::GradientTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    Mse,
}

/// Training target: a class index for cross-entropy, a vector for MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Target,
}

/// MLP with hidden-layer activations and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub weights: GradientTensor,
    pub activation: Activation,
    pub loss: LossKind,
}

impl MlpModel {
    /// Deterministic Glorot-uniform initialization: each layer's weights are
    /// drawn from `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
    pub fn init(layer_dims: &[usize], activation: Activation, loss: LossKind, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::invalid(
                "mlp",
                "layer_dims needs at least [input, output], all positive",
            ));
        }
        let layout = GradientTensor::layout_for_dims(layer_dims);
        let mut weights = GradientTensor::zeros_like_layout(layout);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[layer], layer_dims[layer + 1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, b) = weights.layer_slices_mut(layer);
            for v in w.iter_mut() {
                *v = rng.gen_range(-r..=r);
            }
            for v in b.iter_mut() {
                *v = 0.0;
            }
        }
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            weights,
            activation,
            loss,
        })
    }

    pub fn zeroed(layer_dims: &[usize], activation: Activation, loss: LossKind) -> Result<Self> {
        let mut model = Self::init(layer_dims, activation, loss, 0)?;
        model.weights.values.iter_mut().for_each(|v| *v = 0.0);
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    fn activate(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed in the activated value `a = act(z)`.
    fn activate_grad(&self, a: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    /// Output logits for one input (hidden activations applied, last layer
    /// linear).
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                detail: format!("input has {} features, model expects {}", input.len(), self.input_dim()),
            });
        }
        let mut a = input.to_vec();
        for layer in 0..self.n_layers() {
            a = self.layer_forward(layer, &a)?;
        }
        Ok(a)
    }

    fn layer_forward(&self, layer: usize, input: &[f64]) -> Result<Vec<f64>> {
        let shape = self.weights.layout[layer];
        let (w, b) = self.weights.layer_slices(layer);
        let last = layer == self.n_layers() - 1;
        let mut out = vec![0.0; shape.cols];
        for (j, out_j) in out.iter_mut().enumerate() {
            let mut z = b[j];
            for (i, &x) in input.iter().enumerate() {
                z += x * w[i * shape.cols + j];
            }
            if !z.is_finite() {
                return Err(Error::NonFinite {
                    layer,
                    phase: "forward".into(),
                });
            }
            *out_j = if last { z } else { self.activate(z) };
        }
        Ok(out)
    }
}

fn per_sample_loss_and_delta(model: &MlpModel, logits: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
    match (model.loss, target) {
        (LossKind::Mse, Target::Vector(t)) => {
            if t.len() != logits.len() {
                return Err(Error::DimensionMismatch {
                    detail: format!("target has {} values, output has {}", t.len(), logits.len()),
                });
            }
            let mut loss = 0.0;
            let mut delta = vec![0.0; logits.len()];
            for (j, (&y, &t)) in logits.iter().zip(t).enumerate() {
                let e = y - t;
                loss += 0.5 * e * e;
                delta[j] = e;
            }
            Ok((loss, delta))
        }
        (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => {
            if *c >= logits.len() {
                return Err(Error::DimensionMismatch {
                    detail: format!("class {c} out of range for {} outputs", logits.len()),
                });
            }
            // Stable log-sum-exp.
            let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|&z| (z - zmax).exp()).sum();
            let lse = zmax + sum.ln();
            let loss = lse - logits[*c];
            let mut delta: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
            delta[*c] -= 1.0;
            Ok((loss, delta))
        }
        (LossKind::Mse, Target::Class(_)) => Err(Error::DimensionMismatch {
            detail: "mse loss needs vector targets".into(),
        }),
        (LossKind::SoftmaxCrossEntropy, Target::Vector(_)) => Err(Error::DimensionMismatch {
            detail: "cross-entropy loss needs class targets".into(),
        }),
    }
}

/// Mean loss over the batch and the gradient of that mean.
pub fn forward_backward(model: &MlpModel, batch: &[Sample]) -> Result<(f64, GradientTensor)> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must be non-empty"));
    }
    let n_layers = model.n_layers();
    let mut grad = GradientTensor::zeros_like_layout(model.weights.layout.clone());
    let mut total_loss = 0.0;

    for sample in batch {
        // Forward pass, keeping every layer's activations.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        if sample.input.len() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                detail: format!(
                    "input has {} features, model expects {}",
                    sample.input.len(),
                    model.input_dim()
                ),
            });
        }
        activations.push(sample.input.clone());
        for layer in 0..n_layers {
            let out = model.layer_forward(layer, &activations[layer])?;
            activations.push(out);
        }

        let (loss, mut delta) = per_sample_loss_and_delta(model, &activations[n_layers], &sample.target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                layer: n_layers - 1,
                phase: "loss".into(),
            });
        }
        total_loss += loss;

        // Backward pass: delta holds dL/dz of the current layer.
        for layer in (0..n_layers).rev() {
            let shape = model.weights.layout[layer];
            let input = &activations[layer];
            {
                let (gw, gb) = grad.layer_slices_mut(layer);
                for (i, &x) in input.iter().enumerate() {
                    for (j, &d) in delta.iter().enumerate() {
                        gw[i * shape.cols + j] += x * d;
                    }
                }
                for (j, &d) in delta.iter().enumerate() {
                    gb[j] += d;
                }
            }
            if layer > 0 {
                let (w, _) = model.weights.layer_slices(layer);
                let mut prev = vec![0.0; shape.rows];
                for (i, p) in prev.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, &d) in delta.iter().enumerate() {
                        acc += w[i * shape.cols + j] * d;
                    }
                    if !acc.is_finite() {
                        return Err(Error::NonFinite {
                            layer,
                            phase: "backward".into(),
                        });
                    }
                    // Chain through the hidden activation.
                    *p = acc * model.activate_grad(input[i]);
                }
                delta = prev;
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    grad.values.iter_mut().for_each(|g| *g *= scale);
    Ok((total_loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mse_batch(model: &MlpModel, n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Sample {
                input: (0..model.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                target: Target::Vector(
                    (0..model.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ),
            })
            .collect()
    }

    #[test]
    fn zero_model_zero_data_is_a_fixed_point() {
        let model = MlpModel::zeroed(&[3, 4, 2], Activation::Relu, LossKind::Mse).unwrap();
        let batch = vec![Sample {
            input: vec![0.0; 3],
            target: Target::Vector(vec![0.0; 2]),
        }];
        let (loss, grad) = forward_backward(&model, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_batch_preserves_mean() {
        let model = MlpModel::init(&[4, 6, 3], Activation::Tanh, LossKind::Mse, 7).unwrap();
        let batch = mse_batch(&model, 5, 11);
        let (l1, g1) = forward_backward(&model, &batch).unwrap();
        let mut tripled = batch.clone();
        tripled.extend(batch.clone());
        tripled.extend(batch.clone());
        let (l3, g3) = forward_backward(&model, &tripled).unwrap();
        assert_relative_eq!(l1, l3, max_relative = 1e-12);
        for (a, b) in g1.values.iter().zip(&g3.values) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = MlpModel::init(&[4, 2], Activation::Tanh, LossKind::Mse, 1).unwrap();
        let batch = vec![Sample {
            input: vec![0.0; 3],
            target: Target::Vector(vec![0.0; 2]),
        }];
        assert!(matches!(
            forward_backward(&model, &batch),
            Err(Error::DimensionMismatch { .. })
        ));
        let batch = vec![Sample {
            input: vec![0.0; 4],
            target: Target::Class(0),
        }];
        assert!(matches!(
            forward_backward(&model, &batch),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn softmax_gradient_sums_to_zero_per_sample() {
        // Softmax probabilities sum to 1, so output-bias gradients sum to 0.
        let model =
            MlpModel::init(&[3, 5, 4], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 3).unwrap();
        let batch = vec![Sample {
            input: vec![0.3, -0.2, 0.9],
            target: Target::Class(2),
        }];
        let (_, grad) = forward_backward(&model, &batch).unwrap();
        let (_, gb) = grad.layer_slices(1);
        let sum: f64 = gb.iter().sum();
        assert_relative_eq!(sum, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_inputs_report_the_layer() {
        let model = MlpModel::init(&[2, 3, 1], Activation::Relu, LossKind::Mse, 5).unwrap();
        let batch = vec![Sample {
            input: vec![f64::INFINITY, 1.0],
            target: Target::Vector(vec![0.0]),
        }];
        let err = forward_backward(&model, &batch).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 0, .. }), "{err}");
    }

    /// Central finite differences with step 1e-5, the independent gradient
    /// oracle.
    pub(crate) fn finite_difference(model: &MlpModel, batch: &[Sample], coord: usize) -> f64 {
        let h = 1e-5;
        let mut plus = model.clone();
        plus.weights.values[coord] += h;
        let mut minus = model.clone();
        minus.weights.values[coord] -= h;
        let (lp, _) = forward_backward(&plus, batch).unwrap();
        let (lm, _) = forward_backward(&minus, batch).unwrap();
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for (seed, loss) in [(1u64, LossKind::Mse), (2, LossKind::SoftmaxCrossEntropy)] {
            let model = MlpModel::init(&[5, 8, 3], Activation::Tanh, loss, seed).unwrap();
            let batch: Vec<Sample> = {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
                (0..6)
                    .map(|_| Sample {
                        input: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        target: match loss {
                            LossKind::Mse => Target::Vector(
                                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                            ),
                            LossKind::SoftmaxCrossEntropy => Target::Class(rng.gen_range(0..3)),
                        },
                    })
                    .collect()
            };
            let (_, grad) = forward_backward(&model, &batch).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
            for _ in 0..100 {
                let coord = rng.gen_range(0..grad.len());
                let numeric = finite_difference(&model, &batch, coord);
                let analytic = grad.values[coord];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "coord {coord}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }
}
