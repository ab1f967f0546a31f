//! Fully-connected networks in the NTK parametrization.
//!
//! Layer `l` computes `h^l = (σ/√m_{l-1}) W^l a(h^{l-1}) + σ b^l` with
//! `h^0 = x` fed in without an activation. Raw weights are standard normal;
//! the width-dependent prefactor is part of the forward pass, which is what
//! keeps the tangent kernel `O(1)` as the hidden width grows.
//!
//! All parameters live in one flat vector. The order is `W^1, b^1, W^2, b^2,
//! ...`, each weight matrix stored row-major (`m_l × m_{l-1}`).
//!
//! With [`BiasMode::Zero`] the bias slots stay in the layout but are pinned
//! at zero: the forward pass ignores them and their gradient entries are 0.
//! This is what makes zero-bias relu features exactly homogeneous of degree
//! `L` in σ; trainable zero-initialized biases would contribute features
//! scaling like `σ^{L-l+1}`.

mod data;
mod features;
mod linearized;

use std::fmt;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{Dataset, Split};
pub use features::{
    feature_map, feature_matrix, feature_matrix_chunked, forward, forward_batch, homogeneity_residual,
    loss_and_gradient, FeatureMatrix, DEFAULT_CHUNK_ROWS,
};
pub use linearized::{linearized_forward, LinearizedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, h: f64) -> f64 {
        match self {
            Activation::Relu => h.max(0.0),
            // ln(1 + e^h) without overflow for large |h|
            Activation::Softplus => h.max(0.0) + (-h.abs()).exp().ln_1p(),
        }
    }

    /// Derivative; the relu subgradient at exactly 0 is 0.
    #[inline]
    pub fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => {
                if h >= 0.0 {
                    1.0 / (1.0 + (-h).exp())
                } else {
                    let e = h.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    StandardNormal,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    pub input_dim: usize,
    pub width: usize,
    pub sigma: f64,
    pub activation: Activation,
    pub bias_mode: BiasMode,
}

impl NetworkConfig {
    pub fn new(depth: usize, input_dim: usize, width: usize, sigma: f64) -> Self {
        NetworkConfig {
            depth,
            input_dim,
            width,
            sigma,
            activation: Activation::Relu,
            bias_mode: BiasMode::Zero,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_bias_mode(mut self, bias_mode: BiasMode) -> Self {
        self.bias_mode = bias_mode;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidConfig("depth must be >= 1".into()));
        }
        if self.input_dim < 1 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.width < 1 {
            return Err(Error::InvalidConfig("width must be >= 1".into()));
        }
        // σ = 0 is admitted for Monte-Carlo probing of the degenerate case.
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Layer widths `m_0 = d, m_1 .. m_{L-1} = m, m_L = 1`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.depth + 1);
        w.push(self.input_dim);
        w.extend(std::iter::repeat_n(self.width, self.depth - 1));
        w.push(1);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.widths())
    }

    /// Whether bias slots take part in the forward pass and the gradient.
    pub fn has_biases(&self) -> bool {
        self.bias_mode == BiasMode::StandardNormal
    }

    /// True when the homogeneity identity `f = ⟨θ, ∇f⟩ / L` holds exactly.
    pub fn is_homogeneous(&self) -> bool {
        self.activation == Activation::Relu && self.bias_mode == BiasMode::Zero
    }
}

/// Where one layer's weights and biases sit inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlice {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    layers: Vec<LayerSlice>,
    len: usize,
}

impl Layout {
    fn new(widths: &[usize]) -> Self {
        let mut offset = 0;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerSlice {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect();
        Layout { layers, len: offset }
    }

    pub fn layers(&self) -> &[LayerSlice] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bias_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.layers.iter().map(|l| l.bias.clone())
    }
}

/// Flat parameter vector θ with its per-layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let layout = config.layout();
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        let layout = config.layout();
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Same layout, different values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.layout.len(), "parameter length");
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.values[self.layout.layers[layer].weights.clone()]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.values[self.layout.layers[layer].bias.clone()]
    }

    pub(crate) fn check(&self, config: &NetworkConfig) -> Result<()> {
        let expected = config.param_count();
        if self.values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Draws θ₀ with i.i.d. standard normal weights; biases follow `bias_mode`.
pub fn init_params(config: &NetworkConfig, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(config);
    for layer in params.layout.layers.clone() {
        for w in &mut params.values[layer.weights] {
            *w = StandardNormal.sample(&mut rng);
        }
        if config.bias_mode == BiasMode::StandardNormal {
            for b in &mut params.values[layer.bias] {
                *b = StandardNormal.sample(&mut rng);
            }
        }
    }
    params
}
