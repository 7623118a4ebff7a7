use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels;
use crate::error::{Error, Result};

/// Checkpoint container version written by [`DenseNet::to_checkpoint`].
pub const NET_FORMAT_VERSION: u32 = 1;

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

fn next_instance() -> u64 {
    NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the post-activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Row-major `outputs × inputs`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// A fully connected feed-forward network.
#[derive(Debug)]
pub struct DenseNet {
    layers: Vec<Layer>,
    seed: u64,
    instance: u64,
    generation: u64,
}

impl Clone for DenseNet {
    fn clone(&self) -> Self {
        DenseNet {
            layers: self.layers.clone(),
            seed: self.seed,
            instance: next_instance(),
            generation: 0,
        }
    }
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.layers == other.layers
    }
}

/// Activations recorded by [`DenseNet::forward_cached`] for one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    instance: u64,
    generation: u64,
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache always holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients, one entry per layer, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// Flattened tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| {
                [
                    g.weight.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weight.mapv_inplace(|v| v * factor);
            g.bias.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0))
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Gradients,
    /// Gradient of the loss with respect to the network input.
    pub input_grad: Array2<f64>,
}

impl DenseNet {
    /// Randomly initialised network: He-uniform for relu layers, Xavier-uniform
    /// otherwise, zero biases.
    pub fn new(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        seed: u64,
    ) -> Result<Self> {
        let activations = Self::activation_plan(layer_sizes, hidden, output)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .zip(activations)
            .map(|(dims, activation)| {
                let (fan_in, fan_out) = (dims[0], dims[1]);
                let bound = match activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(DenseNet::from_parts(layers, seed))
    }

    /// All weights and biases zero.
    pub fn zeros(layer_sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        let activations = Self::activation_plan(layer_sizes, hidden, output)?;
        let layers = layer_sizes
            .windows(2)
            .zip(activations)
            .map(|(dims, activation)| Layer {
                weight: Array2::zeros((dims[1], dims[0])),
                bias: Array1::zeros(dims[1]),
                activation,
            })
            .collect();
        Ok(DenseNet::from_parts(layers, 0))
    }

    /// Assemble a network from explicit layers, checking dimension chaining.
    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::shape(
                    format!("layer {k} bias"),
                    layer.outputs(),
                    layer.bias.len(),
                ));
            }
            if k > 0 && layers[k - 1].outputs() != layer.inputs() {
                return Err(Error::shape(
                    format!("layer {k} input"),
                    layers[k - 1].outputs(),
                    layer.inputs(),
                ));
            }
        }
        Ok(DenseNet::from_parts(layers, seed))
    }

    fn from_parts(layers: Vec<Layer>, seed: u64) -> Self {
        DenseNet {
            layers,
            seed,
            instance: next_instance(),
            generation: 0,
        }
    }

    fn activation_plan(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Result<Vec<Activation>> {
        if layer_sizes.len() < 2 {
            return Err(Error::Validation(
                "layer_sizes needs an input and an output size".into(),
            ));
        }
        if let Some(k) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Validation(format!("layer size {k} is zero")));
        }
        let n = layer_sizes.len() - 1;
        Ok((0..n)
            .map(|k| if k + 1 == n { output } else { hidden })
            .collect())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Mutable access to the layers; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    /// Flattened parameter tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::shape("layer 0 input", self.input_dim(), width));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-wise forward pass; each row is evaluated independently.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut layers = self.layers.iter();
        let first = layers.next().expect("non-empty");
        let mut h = Self::layer_forward(first, input);
        for layer in layers {
            h = Self::layer_forward(layer, h.view());
        }
        Ok(h)
    }

    fn layer_forward(layer: &Layer, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = kernels::affine(x, &layer.weight, &layer.bias);
        if layer.activation != Activation::Identity {
            let act = layer.activation;
            z.mapv_inplace(|v| act.apply(v));
        }
        z
    }

    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(input.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for layer in &self.layers {
            let next = Self::layer_forward(layer, activations.last().unwrap().view());
            activations.push(next);
        }
        Ok(ForwardCache {
            instance: self.instance,
            generation: self.generation,
            activations,
        })
    }

    /// Backpropagate `output_grad` (dL/d output, batch × out) through the
    /// activations recorded in `cache`. Gradients are summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<Backward> {
        if cache.instance != self.instance || cache.generation != self.generation {
            return Err(Error::Usage(
                "activation cache is stale or belongs to another network; rerun forward_cached"
                    .into(),
            ));
        }
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Usage("activation cache has the wrong depth".into()));
        }
        if output_grad.dim() != cache.output().dim() {
            return Err(Error::shape(
                "output gradient rows",
                cache.batch_size(),
                output_grad.nrows(),
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[k + 1];
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                ndarray::Zip::from(&mut delta)
                    .and(out)
                    .for_each(|d, &y| *d *= act.derivative_from_output(y));
            }
            let input = &cache.activations[k];
            kernels::accumulate_outer(delta.view(), input.view(), &mut grads.layers[k].weight);
            grads.layers[k].bias = delta.sum_axis(Axis(0));
            delta = kernels::backprop_input(delta.view(), &layer.weight);
        }
        Ok(Backward {
            grads,
            input_grad: delta,
        })
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            format_version: NET_FORMAT_VERSION,
            layer_sizes: self.layer_sizes(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            seed: self.seed,
            weights: self
                .layers
                .iter()
                .map(|l| l.weight.iter().copied().collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: NetCheckpoint) -> Result<Self> {
        if ckpt.format_version != NET_FORMAT_VERSION {
            return Err(Error::Compatibility(format!(
                "network checkpoint version {} is not supported (expected {})",
                ckpt.format_version, NET_FORMAT_VERSION
            )));
        }
        let n = ckpt.layer_sizes.len().saturating_sub(1);
        if n == 0 || ckpt.activations.len() != n || ckpt.weights.len() != n || ckpt.biases.len() != n
        {
            return Err(Error::Validation(
                "network checkpoint layer lists disagree in length".into(),
            ));
        }
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (fan_in, fan_out) = (ckpt.layer_sizes[k], ckpt.layer_sizes[k + 1]);
            let weight = Array2::from_shape_vec((fan_out, fan_in), ckpt.weights[k].clone())
                .map_err(|_| {
                    Error::shape(format!("layer {k} weights"), fan_in * fan_out, ckpt.weights[k].len())
                })?;
            if ckpt.biases[k].len() != fan_out {
                return Err(Error::shape(
                    format!("layer {k} bias"),
                    fan_out,
                    ckpt.biases[k].len(),
                ));
            }
            layers.push(Layer {
                weight,
                bias: Array1::from_vec(ckpt.biases[k].clone()),
                activation: ckpt.activations[k],
            });
        }
        DenseNet::from_layers(layers, ckpt.seed)
    }
}

/// Self-describing serialized network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
    /// Row-major `outputs × inputs` per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Serialize for DenseNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_checkpoint().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DenseNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ckpt = NetCheckpoint::deserialize(d)?;
        DenseNet::from_checkpoint(ckpt).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_layer(weight: Array2<f64>, activation: Activation) -> DenseNet {
        let outs = weight.nrows();
        DenseNet::from_layers(
            vec![Layer {
                weight,
                bias: Array1::zeros(outs),
                activation,
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single_layer(Array2::eye(2), Activation::Identity);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_layer_clamps_negatives() {
        let net = single_layer(Array2::eye(2), Activation::Relu);
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn zero_network_returns_final_bias() {
        let mut net = DenseNet::zeros(&[3, 4, 2], Activation::Relu, Activation::Identity).unwrap();
        net.layers_mut()[1].bias = array![0.5, -1.5];
        assert_eq!(net.forward(&[7.0, -2.0, 1.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn wrong_input_width_names_the_layer() {
        let net = DenseNet::new(&[3, 2], Activation::Tanh, Activation::Identity, 1).unwrap();
        let err = net.forward(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Shape { ref context, expected: 3, actual: 2 } if context.contains("layer 0")));
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let layers = vec![
            Layer {
                weight: Array2::zeros((4, 3)),
                bias: Array1::zeros(4),
                activation: Activation::Relu,
            },
            Layer {
                weight: Array2::zeros((2, 5)),
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            },
        ];
        assert!(matches!(
            DenseNet::from_layers(layers, 0),
            Err(Error::Shape { expected: 4, actual: 5, .. })
        ));
    }

    #[test]
    fn quadratic_loss_on_scalar_linear_net() {
        // y = w x with w = 2, x = 3; L = y^2 so dL/dy = 2y = 12 and dL/dw = 36.
        let net = single_layer(array![[2.0]], Activation::Identity);
        let x = array![[3.0]];
        let cache = net.forward_cached(x.view()).unwrap();
        let y = cache.output()[[0, 0]];
        let back = net.backward(&cache, array![[2.0 * y]].view()).unwrap();
        assert_eq!(back.grads.layers[0].weight[[0, 0]], 36.0);
        assert_eq!(back.grads.layers[0].bias[0], 12.0);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let net = DenseNet::new(&[4, 8, 8, 3], Activation::Relu, Activation::Identity, 9).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let cache = net.forward_cached(x.view()).unwrap();
        let back = net.backward(&cache, Array2::zeros((5, 3)).view()).unwrap();
        assert!(back.grads.is_zero());
        assert!(back.input_grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_is_a_usage_error() {
        let mut net = DenseNet::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, 3).unwrap();
        let x = array![[0.1, 0.2]];
        let cache = net.forward_cached(x.view()).unwrap();
        net.params_mut()[0][0] += 1.0;
        assert!(matches!(
            net.backward(&cache, array![[1.0]].view()),
            Err(Error::Usage(_))
        ));
        let other = net.clone();
        let cache = net.forward_cached(x.view()).unwrap();
        assert!(matches!(
            other.backward(&cache, array![[1.0]].view()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let net = DenseNet::new(&[5, 7, 3], Activation::Relu, Activation::Tanh, 42).unwrap();
        let text = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&text).unwrap();
        assert_eq!(net, back);
        for (a, b) in net.params().iter().zip(back.params()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn unsupported_checkpoint_version_is_rejected() {
        let mut ckpt = DenseNet::new(&[2, 2], Activation::Tanh, Activation::Identity, 1)
            .unwrap()
            .to_checkpoint();
        ckpt.format_version = 99;
        assert!(matches!(
            DenseNet::from_checkpoint(ckpt),
            Err(Error::Compatibility(_))
        ));
    }
}
