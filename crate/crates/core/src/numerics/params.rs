use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub(crate) fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
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

/// Shape of a fully connected network. The output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
    ) -> Self {
        MlpSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation,
        }
    }

    /// A single linear layer.
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, &[], output_dim, Activation::Tanh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::contract(format!(
                "mlp dimensions must be positive: {self}"
            )));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

impl fmt::Display for MlpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        write!(
            f,
            "input={} hidden={} output={} activation={}",
            self.input_dim,
            if hidden.is_empty() {
                "-".to_string()
            } else {
                hidden.join(",")
            },
            self.output_dim,
            self.activation.name()
        )
    }
}

/// Offsets of one layer's weight matrix (fan_out x fan_in, row-major) and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Layout {
    mlp: Option<MlpSpec>,
    layers: Vec<LayerShape>,
    len: usize,
}

/// Flat parameter storage plus an immutable layout mapping offsets to layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in spec.layer_dims() {
            layers.push(LayerShape {
                fan_in,
                fan_out,
                offset,
            });
            offset += fan_in * fan_out + fan_out;
        }
        ParamVector {
            values: vec![0.0; offset],
            layout: Arc::new(Layout {
                mlp: Some(spec.clone()),
                layers,
                len: offset,
            }),
        }
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        let layers = p.layout.layers.clone();
        for layer in layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut p.values[layer.weight_range()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    /// Multiply the weights of the output layer by `factor`; biases are untouched.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(last) = self.layout.layers.last().cloned() {
            for w in &mut self.values[last.weight_range()] {
                *w *= factor;
            }
        }
    }

    /// A vector without network structure, e.g. for finite-difference checks.
    pub fn flat(values: Vec<f64>) -> Self {
        let len = values.len();
        ParamVector {
            values,
            layout: Arc::new(Layout {
                mlp: None,
                layers: Vec::new(),
                len,
            }),
        }
    }

    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(spec);
        if values.len() != p.len() {
            return Err(Error::contract(format!(
                "{} values given for a layout of {}",
                values.len(),
                p.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    /// Zeros with the same layout.
    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::contract("value count does not match layout"));
        }
        Ok(ParamVector {
            values,
            layout: Arc::clone(&self.layout),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mlp(&self) -> Option<&MlpSpec> {
        self.layout.mlp.as_ref()
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layout.layers
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub(crate) fn check_spec(&self, spec: &MlpSpec) -> Result<()> {
        match &self.layout.mlp {
            Some(s) if s == spec => Ok(()),
            Some(s) => Err(Error::contract(format!(
                "params laid out for [{s}], network is [{spec}]"
            ))),
            None => Err(Error::contract("flat parameter vector used as a network")),
        }
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
