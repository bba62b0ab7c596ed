//! Flat parameter/gradient storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of one layer inside the flat vector: a `rows x cols` weight matrix
/// (row-major) followed by `cols` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        (self.rows + 1) * self.cols
    }
}

/// A flat vector of parameters or gradients plus the layout that maps it
/// back onto layers. `flatten . unflatten` is the identity by construction:
/// layer data is stored contiguously in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTensor {
    pub values: Vec<f64>,
    pub layout: Vec<LayerShape>,
}

impl GradientTensor {
    pub fn zeros_like_layout(layout: Vec<LayerShape>) -> Self {
        let len = layout.iter().map(LayerShape::param_count).sum();
        GradientTensor {
            values: vec![0.0; len],
            layout,
        }
    }

    /// Layout implied by a chain of layer dimensions `[d0, d1, ..., dn]`.
    pub fn layout_for_dims(layer_dims: &[usize]) -> Vec<LayerShape> {
        layer_dims
            .windows(2)
            .enumerate()
            .map(|(layer, w)| LayerShape {
                layer,
                rows: w[0],
                cols: w[1],
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_consistent(&self) -> Result<()> {
        let expected: usize = self.layout.iter().map(LayerShape::param_count).sum();
        if expected != self.values.len() {
            return Err(Error::LengthMismatch {
                left: expected,
                right: self.values.len(),
            });
        }
        Ok(())
    }

    /// Start offset of `layer`'s block in the flat vector.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.layout[..layer].iter().map(LayerShape::param_count).sum()
    }

    /// (weights, biases) slices of one layer.
    pub fn layer_slices(&self, layer: usize) -> (&[f64], &[f64]) {
        let shape = self.layout[layer];
        let start = self.layer_offset(layer);
        let w_end = start + shape.rows * shape.cols;
        (&self.values[start..w_end], &self.values[w_end..w_end + shape.cols])
    }

    pub fn layer_slices_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let shape = self.layout[layer];
        let start = self.layer_offset(layer);
        let w_end = start + shape.rows * shape.cols;
        let (_, rest) = self.values.split_at_mut(start);
        let (w, rest) = rest.split_at_mut(shape.rows * shape.cols);
        let _ = w_end;
        (w, &mut rest[..shape.cols])
    }

    /// `self -= lr * grad`, the plain SGD update.
    pub fn sgd_step(&mut self, grad: &GradientTensor, lr: f64) -> Result<()> {
        if self.len() != grad.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: grad.len(),
            });
        }
        for (w, g) in self.values.iter_mut().zip(&grad.values) {
            *w -= lr * g;
        }
        Ok(())
    }

    /// Largest relative coordinate distance to `other`.
    pub fn max_relative_distance(&self, other: &GradientTensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-12))
            .fold(0.0, f64::max)
    }
}
