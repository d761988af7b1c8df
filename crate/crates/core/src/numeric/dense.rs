//! Fully connected layers with hand-derived gradients.
//!
//! Batches are row-major `batch × dim` slices. The single-sample entry points
//! route through the batch kernels so both paths produce bit-identical
//! results. Reductions always run in a fixed order, so training is
//! reproducible to the last bit.

use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{ensure, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

/// `y = act(W x + b)` with `W` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients with the same shapes as a layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().for_each(|g| *g = 0.0);
        self.bias.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Result of [`dense_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl DenseLayer {
    /// Fan-based uniform initialization, `a = sqrt(6 / (in + out))`, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-a, a))
            .collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Checks dimensions and finiteness of every parameter.
    pub fn validate(&self) -> Result<()> {
        ensure(self.weights.len() == self.in_dim * self.out_dim, || {
            format!(
                "weights hold {} values, expected {}x{}",
                self.weights.len(),
                self.out_dim,
                self.in_dim
            )
        })?;
        ensure(self.bias.len() == self.out_dim, || {
            format!("bias holds {} values, expected {}", self.bias.len(), self.out_dim)
        })?;
        ensure(
            self.weights.iter().chain(&self.bias).all(|v| v.is_finite()),
            || "non-finite layer parameter".into(),
        )?;
        if let Activation::LeakyRelu(s) = self.activation {
            ensure(s > 0.0 && s.is_finite(), || format!("invalid leaky slope {s}"))?;
        }
        Ok(())
    }

    /// Forward pass over a `batch × in_dim` block, returning `batch × out_dim`.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        ensure(input.len() == batch * self.in_dim, || {
            format!(
                "layer expects {} inputs per sample, got {} values for batch {}",
                self.in_dim,
                input.len(),
                batch
            )
        })?;
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        let mut out = vec![0.0; batch * n_out];
        for o in 0..n_out {
            let row = &self.weights[o * n_in..(o + 1) * n_in];
            let b = self.bias[o];
            for s in 0..batch {
                out[s * n_out + o] = dot(row, &input[s * n_in..(s + 1) * n_in]) + b;
            }
        }
        let act = self.activation;
        if act != Activation::Identity {
            out.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        Ok(out)
    }

    /// Backward pass over a batch.
    ///
    /// `output` is the cached forward output for `input`. Parameter gradients
    /// are accumulated into `grads`. The input gradient is returned only when
    /// `want_input_grad` is set (the first layer of a network never needs it).
    pub fn backward_batch(
        &self,
        input: &[f64],
        output: &[f64],
        grad_output: &[f64],
        batch: usize,
        grads: &mut LayerGrads,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        ensure(
            input.len() == batch * n_in
                && output.len() == batch * n_out
                && grad_output.len() == batch * n_out,
            || "backward shapes disagree with layer".into(),
        )?;
        ensure(
            grads.weights.len() == self.weights.len() && grads.bias.len() == self.bias.len(),
            || "gradient buffer shape disagrees with layer".into(),
        )?;
        let act = self.activation;
        let delta: Vec<f64> = grad_output
            .iter()
            .zip(output)
            .map(|(g, y)| g * act.derivative_from_output(*y))
            .collect();

        let mut grad_in = if want_input_grad {
            Some(vec![0.0; batch * n_in])
        } else {
            None
        };
        for o in 0..n_out {
            let row = &self.weights[o * n_in..(o + 1) * n_in];
            let grow = &mut grads.weights[o * n_in..(o + 1) * n_in];
            let mut gb = 0.0;
            for s in 0..batch {
                let d = delta[s * n_out + o];
                if d == 0.0 {
                    continue;
                }
                gb += d;
                axpy(d, &input[s * n_in..(s + 1) * n_in], grow);
                if let Some(gi) = grad_in.as_mut() {
                    axpy(d, row, &mut gi[s * n_in..(s + 1) * n_in]);
                }
            }
            grads.bias[o] += gb;
        }
        Ok(grad_in)
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weights, &mut self.bias]
    }
}

/// `activation(W · input + b)` for a single sample.
pub fn dense_forward(layer: &DenseLayer, input: &[f64]) -> Result<Vec<f64>> {
    layer.forward_batch(input, 1)
}

/// Gradients of a scalar loss for one sample, given `dL/dy`.
pub fn dense_backward(
    layer: &DenseLayer,
    cached_input: &[f64],
    grad_output: &[f64],
) -> Result<DenseGrads> {
    ensure(grad_output.len() == layer.out_dim, || {
        format!(
            "grad_output has {} values, layer produces {}",
            grad_output.len(),
            layer.out_dim
        )
    })?;
    let output = dense_forward(layer, cached_input)?;
    let mut grads = LayerGrads::zeros_like(layer);
    let input = layer
        .backward_batch(cached_input, &output, grad_output, 1, &mut grads, true)?
        .unwrap_or_default();
    Ok(DenseGrads {
        input,
        weights: grads.weights,
        bias: grads.bias,
    })
}

/// Runs a stack of layers, keeping every intermediate activation.
/// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
pub fn forward_stack(layers: &[DenseLayer], input: &[f64], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.to_vec());
    for layer in layers {
        let next = layer.forward_batch(acts.last().expect("non-empty"), batch)?;
        acts.push(next);
    }
    Ok(acts)
}

/// Backpropagates `grad_output` through a stack run with [`forward_stack`].
/// Returns the gradient with respect to the stack input when requested.
pub fn backward_stack(
    layers: &[DenseLayer],
    acts: &[Vec<f64>],
    grad_output: Vec<f64>,
    batch: usize,
    grads: &mut [LayerGrads],
    want_input_grad: bool,
) -> Result<Option<Vec<f64>>> {
    let mut g = grad_output;
    for i in (0..layers.len()).rev() {
        let need = want_input_grad || i > 0;
        match layers[i].backward_batch(&acts[i], &acts[i + 1], &g, batch, &mut grads[i], need)? {
            Some(next) => g = next,
            None => return Ok(None),
        }
    }
    Ok(Some(g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for o in 0..layer.out_dim {
            let mut acc = 0.0;
            for i in 0..layer.in_dim {
                acc += layer.weights[o * layer.in_dim + i] * x[i];
            }
            out.push(layer.activation.apply(acc + layer.bias[o]));
        }
        out
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut layer = DenseLayer::zeros(3, 3, Activation::Identity);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(dense_forward(&layer, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_affine() {
        let mut layer = DenseLayer::zeros(1, 1, Activation::Identity);
        layer.weights[0] = 2.0;
        layer.bias[0] = 1.0;
        assert_eq!(dense_forward(&layer, &[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn matches_naive_loop_oracle() {
        let mut rng = RngStream::new(11);
        for act in [Activation::leaky(), Activation::Tanh, Activation::Sigmoid, Activation::Identity] {
            let mut layer = DenseLayer::init(4, 3, act, &mut rng);
            layer.bias = vec![0.1, -0.2, 0.3];
            let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let fast = dense_forward(&layer, &x).unwrap();
            let slow = naive_forward(&layer, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let layer = DenseLayer::zeros(3, 2, Activation::Identity);
        assert!(dense_forward(&layer, &[1.0, 2.0]).is_err());
        assert!(dense_backward(&layer, &[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let mut rng = RngStream::new(5);
        let layer = DenseLayer::init(3, 2, Activation::Identity, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let g = [3.0, -0.25];
        let grads = dense_backward(&layer, &x, &g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads.weights[o * 3 + i], g[o] * x[i]);
            }
        }
        assert_eq!(grads.bias, g.to_vec());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = RngStream::new(6);
        let layer = DenseLayer::init(4, 3, Activation::Tanh, &mut rng);
        let grads = dense_backward(&layer, &[1.0, 2.0, 3.0, 4.0], &[0.0; 3]).unwrap();
        assert!(grads.input.iter().chain(&grads.weights).chain(&grads.bias).all(|v| *v == 0.0));
    }

    #[test]
    fn batch_rows_match_single_sample_bitwise() {
        let mut rng = RngStream::new(8);
        let layer = DenseLayer::init(37, 5, Activation::leaky(), &mut rng);
        let xs: Vec<f64> = (0..3 * 37).map(|_| rng.normal()).collect();
        let batch = layer.forward_batch(&xs, 3).unwrap();
        for s in 0..3 {
            let single = dense_forward(&layer, &xs[s * 37..(s + 1) * 37]).unwrap();
            assert_eq!(&batch[s * 5..(s + 1) * 5], single.as_slice());
        }
    }

    #[test]
    fn init_respects_fan_bound() {
        let mut rng = RngStream::new(1);
        let layer = DenseLayer::init(10, 6, Activation::Identity, &mut rng);
        let a = (6.0f64 / 16.0).sqrt();
        assert!(layer.weights.iter().all(|w| w.abs() <= a));
        assert!(layer.bias.iter().all(|b| *b == 0.0));
        layer.validate().unwrap();
    }
}
