//! Fully-connected tanh network mapping a scalar time to a 4-component state.
//!
//! The layout is fixed by the problem: one input (time), any number of tanh
//! hidden layers, and a linear 4-output layer so the approximated solution
//! values are not range-limited. Networks are immutable values; training
//! produces new networks from flat parameter vectors.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of network outputs, one per ESD state component.
pub const OUTPUT_DIM: usize = 4;

/// Hyperbolic tangent activation, `(e^x - e^-x)/(e^x + e^-x)`.
///
/// Delegates to the libm implementation, which saturates to ±1 for large
/// arguments instead of overflowing.
#[inline]
pub fn tanh_activation(x: f64) -> f64 {
    x.tanh()
}

/// Shape of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
}

/// One dense layer: weights of shape `fan_in x fan_out` plus a bias row.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) weights: Array2<f64>,
    pub(crate) bias: Array1<f64>,
}

impl Layer {
    pub fn shape(&self) -> LayerShape {
        LayerShape { fan_in: self.weights.nrows(), fan_out: self.weights.ncols() }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }
}

/// Affine map applied to the raw time input before the first layer.
///
/// `apply(t) = scale * t + offset`. Wide time domains saturate the first
/// tanh layer; remapping the span onto [-1, 1] avoids that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub scale: f64,
    pub offset: f64,
}

impl InputScaling {
    /// Maps `[a, b]` onto `[-1, 1]`.
    pub fn from_span(a: f64, b: f64) -> Self {
        let scale = 2.0 / (b - a);
        Self { scale, offset: -(a + b) / (b - a) }
    }

    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        self.scale * t + self.offset
    }
}

/// Feed-forward network `t -> (X1, X2, X3, X4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
    input_scaling: Option<InputScaling>,
    seed: u64,
}

/// Flat view of all network parameters.
///
/// Layout, frozen for checkpoint stability: layer by layer, the weight
/// matrix in row-major order followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Serializable snapshot of a network: shapes, provenance seed, input map
/// and the flat parameters. JSON serialization keeps every f64 bit-exact
/// (shortest round-trip decimal form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub shapes: Vec<LayerShape>,
    pub seed: u64,
    pub input_scaling: Option<InputScaling>,
    pub params: Vec<f64>,
}

/// Builds a seeded network with Glorot-uniform weights and zero biases.
///
/// Layer sizes: `1 -> hidden_width` (x1), `hidden_width -> hidden_width`
/// (x hidden_layers-1), `hidden_width -> 4`. Weights are drawn layer by
/// layer in row-major order from `U[-L, L]` with `L = sqrt(6/(fan_in +
/// fan_out))`, so the construction is fully determined by `seed`.
pub fn init_network(hidden_layers: usize, hidden_width: usize, seed: u64) -> Result<MlpNetwork> {
    if hidden_layers < 1 || hidden_width < 1 {
        return Err(Error::InvalidArgument(format!(
            "network size must be at least 1x1, got {hidden_layers}x{hidden_width}"
        )));
    }
    let mut shapes = Vec::with_capacity(hidden_layers + 1);
    shapes.push(LayerShape { fan_in: 1, fan_out: hidden_width });
    for _ in 1..hidden_layers {
        shapes.push(LayerShape { fan_in: hidden_width, fan_out: hidden_width });
    }
    shapes.push(LayerShape { fan_in: hidden_width, fan_out: OUTPUT_DIM });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = shapes
        .iter()
        .map(|shape| {
            let limit = (6.0 / (shape.fan_in + shape.fan_out) as f64).sqrt();
            let weights = Array2::from_shape_fn((shape.fan_in, shape.fan_out), |_| {
                limit * (2.0 * rng.random::<f64>() - 1.0)
            });
            Layer { weights, bias: Array1::zeros(shape.fan_out) }
        })
        .collect();
    Ok(MlpNetwork { layers, input_scaling: None, seed })
}

impl MlpNetwork {
    /// Builds a network from explicit `(weights, bias)` pairs.
    ///
    /// Validates the chain: shapes must link up, the first fan-in must be 1,
    /// the last fan-out 4, and every entry finite.
    pub fn from_layers(layers: Vec<(Array2<f64>, Array1<f64>)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if layers[0].0.nrows() != 1 {
            return Err(Error::InvalidArgument(format!(
                "first layer fan_in must be 1, got {}",
                layers[0].0.nrows()
            )));
        }
        if layers[layers.len() - 1].0.ncols() != OUTPUT_DIM {
            return Err(Error::InvalidArgument(format!(
                "last layer fan_out must be {OUTPUT_DIM}, got {}",
                layers[layers.len() - 1].0.ncols()
            )));
        }
        for (v, (w, b)) in layers.iter().enumerate() {
            if b.len() != w.ncols() {
                return Err(Error::InvalidArgument(format!(
                    "layer {v}: bias length {} does not match fan_out {}",
                    b.len(),
                    w.ncols()
                )));
            }
            if v > 0 && layers[v - 1].0.ncols() != w.nrows() {
                return Err(Error::InvalidArgument(format!(
                    "layer {v}: fan_in {} does not chain with previous fan_out {}",
                    w.nrows(),
                    layers[v - 1].0.ncols()
                )));
            }
            if w.iter().chain(b.iter()).any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {v}: non-finite entry")));
            }
        }
        let layers = layers
            .into_iter()
            .map(|(weights, bias)| Layer { weights, bias })
            .collect();
        Ok(Self { layers, input_scaling: None, seed: 0 })
    }

    pub fn with_input_scaling(mut self, scaling: Option<InputScaling>) -> Self {
        self.input_scaling = scaling;
        self
    }

    pub fn input_scaling(&self) -> Option<InputScaling> {
        self.input_scaling
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(Layer::shape).collect()
    }

    /// Total number of weights and biases.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Maps raw time to the first-layer input and returns `(input, d input/dt)`.
    #[inline]
    pub(crate) fn map_input(&self, t: f64) -> (f64, f64) {
        match self.input_scaling {
            Some(s) => (s.apply(t), s.scale),
            None => (t, 1.0),
        }
    }

    /// Evaluates the network at time `t`: tanh hidden layers, linear output.
    pub fn forward(&self, t: f64) -> [f64; 4] {
        let (t_in, _) = self.map_input(t);
        let mut a = Array1::from_elem(1, t_in);
        let last = self.layers.len() - 1;
        for (v, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights) + &layer.bias;
            if v < last {
                z.mapv_inplace(tanh_activation);
            }
            a = z;
        }
        [a[0], a[1], a[2], a[3]]
    }

    /// Flattens all parameters into the frozen layout.
    pub fn flatten(&self) -> ParameterVector {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        ParameterVector(out)
    }

    /// Rebuilds a network with this network's shapes and input map from a
    /// flat parameter vector. Inverse of [`MlpNetwork::flatten`].
    pub fn unflatten(&self, v: &ParameterVector) -> Result<MlpNetwork> {
        let expected = self.parameter_count();
        if v.len() != expected {
            return Err(Error::LengthMismatch { expected, got: v.len() });
        }
        let mut cursor = v.as_slice();
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let (fan_in, fan_out) = (layer.weights.nrows(), layer.weights.ncols());
                let (w_flat, rest) = cursor.split_at(fan_in * fan_out);
                let (b_flat, rest) = rest.split_at(fan_out);
                cursor = rest;
                Layer {
                    weights: Array2::from_shape_vec((fan_in, fan_out), w_flat.to_vec())
                        .expect("shape matches split length"),
                    bias: Array1::from_vec(b_flat.to_vec()),
                }
            })
            .collect();
        Ok(MlpNetwork { layers, input_scaling: self.input_scaling, seed: self.seed })
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            shapes: self.layer_shapes(),
            seed: self.seed,
            input_scaling: self.input_scaling,
            params: self.flatten().into_vec(),
        }
    }

    pub fn from_checkpoint(ck: &NetworkCheckpoint) -> Result<MlpNetwork> {
        if ck.shapes.is_empty() {
            return Err(Error::InvalidArgument("checkpoint has no layers".into()));
        }
        let layers = ck
            .shapes
            .iter()
            .map(|s| Layer {
                weights: Array2::zeros((s.fan_in, s.fan_out)),
                bias: Array1::zeros(s.fan_out),
            })
            .collect();
        let template = MlpNetwork {
            layers,
            input_scaling: ck.input_scaling,
            seed: ck.seed,
        };
        if template.layers[0].weights.nrows() != 1
            || template.layers[template.layers.len() - 1].weights.ncols() != OUTPUT_DIM
        {
            return Err(Error::InvalidArgument("checkpoint shapes are not 1 -> ... -> 4".into()));
        }
        template.unflatten(&ParameterVector(ck.params.clone()))
    }
}
