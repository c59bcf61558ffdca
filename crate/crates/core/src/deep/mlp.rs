use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer, `y = x W + b`, with `W` stored `in × out` so that
/// row batches multiply without a transpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// A fully connected network with ReLU hidden layers and a linear output.
/// Batches are row-major: one observation per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; entry 0 is the batch itself.
    inputs: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl MlpParams {
    /// Uniform `±1/√fan_in` initialization of weights and biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weight: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound)),
                    bias: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: DMatrix::zeros(w[0], w[1]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.ncols()
    }

    pub fn forward(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(batch)?.output)
    }

    /// Forward pass of a single observation through matrix-vector products,
    /// much cheaper than a one-row batch.
    pub fn forward_one(&self, obs: &[f64]) -> Result<DVector<f64>> {
        if obs.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "observation has {} features, network expects {}",
                obs.len(),
                self.input_dim()
            )));
        }
        let mut x = DVector::from_column_slice(obs);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.tr_mul(&x) + &layer.bias;
            if i + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, batch: &DMatrix<f64>) -> Result<ForwardCache> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} features, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &x * &layer.weight;
            for (j, mut col) in z.column_iter_mut().enumerate() {
                col.add_scalar_mut(layer.bias[j]);
            }
            if i + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut x, z));
        }
        Ok(ForwardCache { inputs, output: x })
    }

    /// Gradients of a loss with respect to all parameters, given the
    /// gradient with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &DMatrix<f64>) -> Result<MlpParams> {
        if output_grad.shape() != cache.output.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                output_grad.shape(),
                cache.output.shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let weight = input.transpose() * &g;
            let bias = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
            grads.push(Layer { weight, bias });
            if i > 0 {
                let mut prev = (&layer.weight * g.transpose()).transpose();
                // The input of layer i is the ReLU output of layer i − 1.
                prev.zip_apply(input, |p, a| {
                    if a <= 0.0 {
                        *p = 0.0
                    }
                });
                g = prev;
            }
        }
        grads.reverse();
        Ok(MlpParams { layers: grads })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Locates flat parameter `idx` as `(layer, is_bias, offset)`.
    fn locate(&self, mut idx: usize) -> (usize, bool, usize) {
        for (i, l) in self.layers.iter().enumerate() {
            if idx < l.weight.len() {
                return (i, false, idx);
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                return (i, true, idx);
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn get(&self, idx: usize) -> f64 {
        match self.locate(idx) {
            (i, false, o) => self.layers[i].weight[o],
            (i, true, o) => self.layers[i].bias[o],
        }
    }

    pub fn set(&mut self, idx: usize, value: f64) {
        match self.locate(idx) {
            (i, false, o) => self.layers[i].weight[o] = value,
            (i, true, o) => self.layers[i].bias[o] = value,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// `self ← (1 − τ) self + τ other`.
    pub fn polyak_from(&mut self, other: &MlpParams, tau: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.zip_apply(&b.weight, |x, y| *x = (1.0 - tau) * *x + tau * y);
            a.bias.zip_apply(&b.bias, |x, y| *x = (1.0 - tau) * *x + tau * y);
        }
    }
}
