//! Dense multi-layer perceptrons with exact reverse-mode gradients and Adam.
//!
//! Everything is `f64`. Weights are stored `[in, out]` row-major so that both
//! the forward product and the weight gradient walk contiguous rows, and
//! zero input entries (one-hot observations) can be skipped outright.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;

pub use adam::{adam_step, adam_step_frozen, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{backward_mlp, dense, dense_backward, forward_mlp, Activation, MlpGradients};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBuffer {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorBuffer {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::contract(format!("invalid tensor shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                layer: "tensor".into(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// A 1-d tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// A `[rows, cols]` tensor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Width of the last dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    /// Product of all leading dimensions.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One affine layer: `y = x W + b` with `W` shaped `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: TensorBuffer,
    pub bias: TensorBuffer,
}

impl Layer {
    pub fn new(weight: TensorBuffer, bias: TensorBuffer) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape().len() != 1 || weight.cols() != bias.len() {
            return Err(Error::contract(format!(
                "layer shapes weight {:?} bias {:?} are inconsistent",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: TensorBuffer::zeros(vec![input, output]),
            bias: TensorBuffer::zeros(vec![output]),
        }
    }

    /// Uniform init with standard deviation `gain / sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain * (3.0 / input as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-1.0..=1.0) * bound;
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }
}

/// Named layers in insertion order.
///
/// Gradients and optimizer moments reuse this type, so every
/// element-wise helper here assumes the operands share one topology.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: Vec<(String, Layer)>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::contract(format!("duplicate layer name `{name}`")));
        }
        self.entries.push((name, layer));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Layer> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, l)| l)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, l)| l)
    }

    pub fn layer(&self, name: &str) -> Result<&Layer> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("missing layer `{name}`")))
    }

    pub fn layer_mut(&mut self, name: &str) -> Result<&mut Layer> {
        self.get_mut(name)
            .ok_or_else(|| Error::contract(format!("missing layer `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Layer)> {
        self.entries.iter().map(|(n, l)| (n.as_str(), l))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Layer)> {
        self.entries.iter_mut().map(|(n, l)| (n.as_str(), l))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.iter().map(|(_, l)| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, l)| (n.clone(), l.zeros_like()))
                .collect(),
        }
    }

    /// Subset of layers, in the order given.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let mut out = Self::new();
        for name in names {
            out.push(*name, self.layer(name)?.clone())?;
        }
        Ok(out)
    }

    /// Every scalar, layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries
            .iter()
            .flat_map(|(_, l)| l.weight.data().iter().chain(l.bias.data()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.entries.iter_mut().flat_map(|(_, l)| {
            l.weight
                .data
                .iter_mut()
                .chain(l.bias.data.iter_mut())
        })
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`; layer names must line up.
    pub fn add_scaled(&mut self, other: &ParameterSet, factor: f64) {
        debug_assert_eq!(self.len(), other.len());
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.weight.data.iter_mut().zip(&b.weight.data) {
                *x += factor * y;
            }
            for (x, y) in a.bias.data.iter_mut().zip(&b.bias.data) {
                *x += factor * y;
            }
        }
    }

    /// Name of the first layer holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter()
            .find(|(_, l)| !l.weight.is_finite() || !l.bias.is_finite())
            .map(|(n, _)| n)
    }

    /// Shapes line up layer for layer.
    pub fn same_topology(&self, other: &ParameterSet) -> bool {
        self.len() == other.len()
            && self.entries.iter().zip(&other.entries).all(|((na, a), (nb, b))| {
                na == nb && a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape()
            })
    }
}
