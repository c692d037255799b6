//! Small fully connected encoder `Theta_beta : R^D -> R^N`.
//!
//! Hidden layers use `tanh`, the output layer is affine. Inputs go through a
//! fixed (untrained) standardization `(x - shift) * scale` first, which keeps
//! raw torus coordinates of size ~15 out of the saturated range of `tanh`.
//! Batches are stored column-wise: a `D x B` matrix holds `B` inputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::MultiViewDataset;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    /// Linear hidden layers; only useful for tests.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer, `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn zeros(input: usize, output: usize) -> Self {
        Layer {
            weight: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }
}

/// Encoder weights plus the fixed input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layer_dims: Vec<usize>,
    pub layers: Vec<Layer>,
    pub hidden_activation: Activation,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Forward-pass values kept for backpropagation.
pub struct ForwardCache {
    /// `activations[0]` is the standardized input, the last entry the output.
    pub activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("at least one layer")
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::config(format!(
            "encoder needs at least input and output sizes, all positive; got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl EncoderParams {
    /// All-zero weights and biases with identity standardization.
    pub fn zeros(layer_dims: &[usize], hidden_activation: Activation) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(EncoderParams {
            layer_dims: layer_dims.to_vec(),
            layers: layer_dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            hidden_activation,
            input_shift: vec![0.0; layer_dims[0]],
            input_scale: vec![1.0; layer_dims[0]],
        })
    }

    /// Glorot-uniform weights, zero biases, seeded per layer.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(layer_dims, Activation::Tanh)?;
        for (l, layer) in p.layers.iter_mut().enumerate() {
            let (out, inp) = layer.weight.shape();
            let bound = (6.0 / (inp + out) as f64).sqrt();
            let mut rng = rng::stream(seed, Domain::Init, l as u64);
            for i in 0..out {
                for j in 0..inp {
                    layer.weight[(i, j)] = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(p)
    }

    /// Sets the standardization from every view in `dataset`: per-coordinate
    /// centering and one shared scale giving unit average variance.
    pub fn fit_standardization(&mut self, dataset: &MultiViewDataset) -> Result<()> {
        let dim = dataset.dim();
        if dim != self.input_dim() {
            return Err(Error::config(format!(
                "encoder expects {}-dim inputs, dataset has {dim}",
                self.input_dim()
            )));
        }
        let count = (dataset.m() * dataset.n()) as f64;
        let mut mean = vec![0.0; dim];
        for p in dataset.points().chunks_exact(dim) {
            for (acc, v) in mean.iter_mut().zip(p) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= count);
        let mut var = 0.0;
        for p in dataset.points().chunks_exact(dim) {
            var += p.iter().zip(&mean).map(|(v, c)| (v - c) * (v - c)).sum::<f64>();
        }
        let avg_var = var / (count * dim as f64);
        let scale = if avg_var > 0.0 { 1.0 / avg_var.sqrt() } else { 1.0 };
        self.input_shift = mean;
        self.input_scale = vec![scale; dim];
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer: weight (column-major), then bias.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let w = layer.weight.len();
            layer.weight.as_mut_slice().copy_from_slice(&flat[at..at + w]);
            at += w;
            let b = layer.bias.len();
            layer.bias.as_mut_slice().copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn standardize(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = inputs.clone();
        for mut col in x.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = (*v - self.input_shift[i]) * self.input_scale[i];
            }
        }
        x
    }

    /// Forward pass over a `D x B` batch.
    pub fn forward(&self, inputs: &DMatrix<f64>) -> Result<ForwardCache> {
        if inputs.nrows() != self.input_dim() {
            return Err(Error::Data(format!(
                "encoder expects {}-dim inputs, got {}",
                self.input_dim(),
                inputs.nrows()
            )));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(self.standardize(inputs));
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * activations.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if l < last {
                let act = self.hidden_activation;
                z.apply(|v| *v = act.apply(*v));
            }
            activations.push(z);
        }
        if activations.last().unwrap().iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("encoder produced non-finite activations"));
        }
        Ok(ForwardCache { activations })
    }

    /// Backpropagates `grad_output` (`N x B`, derivative of a scalar loss
    /// with respect to the outputs) into parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &DMatrix<f64>) -> Vec<Layer> {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.activations[l];
            let weight_grad = &delta * input.transpose();
            let bias_grad = delta.column_sum();
            if l > 0 {
                let mut back = self.layers[l].weight.transpose() * &delta;
                let act = self.hidden_activation;
                back.zip_apply(input, |g, a| *g *= act.derivative_from_output(a));
                delta = back;
            }
            grads.push(Layer {
                weight: weight_grad,
                bias: bias_grad,
            });
        }
        grads.reverse();
        grads
    }

    /// Representation of a single point.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(cache.output().column(0).iter().copied().collect())
    }

    /// Representations of many points stored as a `D x B` matrix.
    pub fn encode_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(inputs)?.output().clone())
    }

    /// `self -= step * grad`.
    pub fn apply_update(&mut self, grads: &[Layer], step: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.weight -= &g.weight * step;
            layer.bias -= &g.bias * step;
        }
    }
}

pub fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(l.bias.as_slice());
    }
    out
}
