//! Small dense-network core with explicit forward/backward passes.
//!
//! Parameters of a [`Net`] live in one flat `f64` array. Layer `l` stores
//! its weight matrix row-major as `[input][output]`, followed by its bias.
//! Batches are row-major `[batch][width]`.

mod adam;
mod checkpoint;
mod encoder_model;
mod gradcheck;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder_model::{
    DEFAULT_TRUNK,
    pair_points, pointnet_encode, BatchEncoding, EncodeOutput, EncoderGrads, EncoderModel,
    FEATURE_DIM, PAIRED_POINT_DIM, POINT_UNIT,
};
pub use gradcheck::{grad_check, relative_error};
pub use loss::{cross_entropy, softmax};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    #[serde(rename = "none")]
    Identity,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            input,
            output,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Builds a chain of layer specs: `widths[0] → … → widths[last]`, with
/// `hidden` activation everywhere except the final layer.
pub fn mlp_specs(widths: &[usize], hidden: Activation, last: Activation) -> Vec<LayerSpec> {
    let n = widths.len() - 1;
    (0..n)
        .map(|l| {
            let act = if l + 1 == n { last } else { hidden };
            LayerSpec::new(widths[l], widths[l + 1], act)
        })
        .collect()
}

/// Feed-forward network over a flat parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Per-layer outputs of a forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Activations {
    pub batch: usize,
    pub values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("activations include the input")
    }
}

impl Net {
    /// Zero-initialized network.
    pub fn zeros(layers: Vec<LayerSpec>) -> Self {
        assert!(!layers.is_empty(), "a net needs at least one layer");
        for w in layers.windows(2) {
            assert_eq!(w[0].output, w[1].input, "layer widths must chain");
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        Self {
            layers,
            params: vec![0.0; total],
            offsets,
        }
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Self {
        let mut net = Self::zeros(layers);
        for l in 0..net.layers.len() {
            let spec = net.layers[l];
            let bound = (6.0 / (spec.input + spec.output) as f64).sqrt();
            let start = net.offsets[l];
            for w in &mut net.params[start..start + spec.input * spec.output] {
                *w = (2.0 * rng.random::<f64>() - 1.0) * bound;
            }
        }
        net
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(layers);
        if params.len() != net.params.len() {
            return Err(NnError::LengthMismatch(net.params.len(), params.len()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = self.layers[layer];
        &self.params[self.offsets[layer]..self.offsets[layer] + s.input * s.output]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.layers[layer];
        let start = self.offsets[layer] + s.input * s.output;
        &self.params[start..start + s.output]
    }

    /// Parameter range `(weight start, bias start, end)` of a layer.
    pub fn layer_range(&self, layer: usize) -> (usize, usize, usize) {
        let s = self.layers[layer];
        let w = self.offsets[layer];
        (w, w + s.input * s.output, w + s.param_count())
    }

    /// Mutable access to a layer's weights, e.g. to zero a final layer.
    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (w, b, _) = self.layer_range(layer);
        &mut self.params[w..b]
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Activations> {
        let width = self.input_width();
        if input.len() != width * batch {
            return Err(NnError::ShapeMismatch {
                expected: width * batch,
                got: input.len(),
            });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for l in 0..self.layers.len() {
            let out = self.forward_layer(l, values.last().unwrap(), batch);
            values.push(out);
        }
        Ok(Activations { batch, values })
    }

    /// Output only; skips keeping intermediate activations.
    pub fn predict(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        let width = self.input_width();
        if input.len() != width * batch {
            return Err(NnError::ShapeMismatch {
                expected: width * batch,
                got: input.len(),
            });
        }
        let mut x = self.forward_layer(0, input, batch);
        for l in 1..self.layers.len() {
            x = self.forward_layer(l, &x, batch);
        }
        Ok(x)
    }

    pub(crate) fn forward_layer(&self, layer: usize, x: &[f64], batch: usize) -> Vec<f64> {
        let spec = self.layers[layer];
        let (n_in, n_out) = (spec.input, spec.output);
        let bias = self.bias(layer);
        let mut y = Vec::with_capacity(batch * n_out);
        for _ in 0..batch {
            y.extend_from_slice(bias);
        }
        gemm(
            batch,
            n_in,
            n_out,
            x,
            (n_in, 1),
            self.weights(layer),
            (n_out, 1),
            &mut y,
            1.0,
        );
        if spec.activation != Activation::Identity {
            for v in y.iter_mut() {
                *v = spec.activation.apply(*v);
            }
        }
        y
    }

    /// Backpropagates `output_grad` (gradient of a scalar loss with respect
    /// to the net output), accumulating parameter gradients into
    /// `param_grad` and returning the input gradient.
    pub fn backward(
        &self,
        acts: &Activations,
        output_grad: &[f64],
        param_grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.backward_from(acts, self.layers.len(), output_grad.to_vec(), param_grad)
    }

    /// Like [`Net::backward`], but starts from the output of layer `top - 1`
    /// and propagates through layers `top - 1, …, 0`.
    pub fn backward_from(
        &self,
        acts: &Activations,
        top: usize,
        mut grad: Vec<f64>,
        param_grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if param_grad.len() != self.params.len() {
            return Err(NnError::LengthMismatch(self.params.len(), param_grad.len()));
        }
        if acts.values.len() != self.layers.len() + 1 {
            return Err(NnError::ShapeMismatch {
                expected: self.layers.len() + 1,
                got: acts.values.len(),
            });
        }
        let batch = acts.batch;
        let expected = batch * self.layers[top - 1].output;
        if grad.len() != expected {
            return Err(NnError::ShapeMismatch {
                expected,
                got: grad.len(),
            });
        }
        for l in (0..top).rev() {
            let spec = self.layers[l];
            let (n_in, n_out) = (spec.input, spec.output);
            let y = &acts.values[l + 1];
            let x = &acts.values[l];
            if spec.activation != Activation::Identity {
                for (g, &out) in grad.iter_mut().zip(y.iter()) {
                    *g *= spec.activation.derivative_from_output(out);
                }
            }
            let (w0, b0, end) = self.layer_range(l);
            // dW += xᵀ · dz
            gemm(
                n_in,
                batch,
                n_out,
                x,
                (1, n_in),
                &grad,
                (n_out, 1),
                &mut param_grad[w0..b0],
                1.0,
            );
            let db = &mut param_grad[b0..end];
            for row in grad.chunks_exact(n_out) {
                for (d, g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
            // dx = dz · Wᵀ
            let mut dx = vec![0.0; batch * n_in];
            gemm(
                batch,
                n_out,
                n_in,
                &grad,
                (n_out, 1),
                self.weights(l),
                (1, n_out),
                &mut dx,
                0.0,
            );
            grad = dx;
        }
        Ok(grad)
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn param_hash(&self) -> String {
        hash_params([self.params.as_slice()])
    }
}

pub(crate) fn hash_params<'a>(arrays: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for arr in arrays {
        for v in arr {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// `C = A·B + beta·C` for row/column-strided views. `a` is `m×k`, `b` is
/// `k×n`, `c` is dense row-major `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= if m * k == 0 { 0 } else { (m - 1) * a_strides.0 + (k - 1) * a_strides.1 + 1 });
    assert!(b.len() >= if k * n == 0 { 0 } else { (k - 1) * b_strides.0 + (n - 1) * b_strides.1 + 1 });
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn parameter_count_matches_layout() {
        let net = Net::new(
            mlp_specs(&[5, 7, 3], Activation::Relu, Activation::Identity),
            &mut rng(0),
        );
        assert_eq!(net.param_count(), 5 * 7 + 7 + 7 * 3 + 3);
        assert_eq!(net.layer_range(1), (42, 63, 66));
    }

    #[test]
    fn zero_net_outputs_bias() {
        let mut net = Net::zeros(vec![LayerSpec::new(3, 2, Activation::Identity)]);
        let (_, b, _) = net.layer_range(0);
        net.params_mut()[b] = 0.5;
        let out = net.predict(&[1.0, -2.0, 3.0], 1).unwrap();
        assert_eq!(out, vec![0.5, 0.0]);
    }

    #[test]
    fn identity_layer_reproduces_input() {
        let mut net = Net::zeros(vec![LayerSpec::new(3, 3, Activation::Identity)]);
        for i in 0..3 {
            net.weights_mut(0)[i * 3 + i] = 1.0;
        }
        let x = [0.25, -1.5, 7.0];
        assert_eq!(net.predict(&x, 1).unwrap(), x.to_vec());
    }

    #[test]
    fn batching_is_bit_exact() {
        let net = Net::new(
            mlp_specs(&[6, 33, 17, 4], Activation::Tanh, Activation::Identity),
            &mut rng(1),
        );
        let mut r = rng(2);
        let x: Vec<f64> = (0..12).map(|_| r.random::<f64>() - 0.5).collect();
        let both = net.predict(&x, 2).unwrap();
        let mut separate = net.predict(&x[..6], 1).unwrap();
        separate.extend(net.predict(&x[6..], 1).unwrap());
        assert_eq!(both, separate);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = Net::zeros(vec![LayerSpec::new(3, 2, Activation::Relu)]);
        assert!(matches!(
            net.forward(&[1.0, 2.0], 1),
            Err(NnError::ShapeMismatch { expected: 3, got: 2 })
        ));
        let acts = net.forward(&[1.0, 2.0, 3.0], 1).unwrap();
        let mut g = vec![0.0; net.param_count()];
        assert!(net.backward(&acts, &[1.0], &mut g).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = Net::new(
            mlp_specs(&[4, 8, 3], Activation::Relu, Activation::Identity),
            &mut rng(3),
        );
        let acts = net.forward(&[0.1, 0.2, 0.3, 0.4], 1).unwrap();
        let mut g = vec![0.0; net.param_count()];
        let dx = net.backward(&acts, &[0.0; 3], &mut g).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let net = Net::new(vec![LayerSpec::new(3, 2, Activation::Identity)], &mut rng(4));
        let x = [1.0, -2.0, 0.5];
        let dy = [0.3, -0.7];
        let acts = net.forward(&x, 1).unwrap();
        let mut g = vec![0.0; net.param_count()];
        net.backward(&acts, &dy, &mut g).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(g[i * 2 + j], x[i] * dy[j]);
            }
        }
        assert_eq!(&g[6..], &dy);
    }

    #[test]
    fn three_layer_gradient_matches_finite_differences() {
        let specs = mlp_specs(&[5, 16, 12, 3], Activation::Tanh, Activation::Identity);
        let net = Net::new(specs.clone(), &mut rng(5));
        let mut r = rng(6);
        let batch = 4;
        let x: Vec<f64> = (0..5 * batch).map(|_| r.random::<f64>() - 0.5).collect();
        let w: Vec<f64> = (0..3 * batch).map(|_| r.random::<f64>() - 0.5).collect();
        let loss = |p: &[f64]| {
            let n = Net::from_params(specs.clone(), p.to_vec()).unwrap();
            let y = n.predict(&x, batch).unwrap();
            let value: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
            let acts = n.forward(&x, batch).unwrap();
            let mut g = vec![0.0; n.param_count()];
            n.backward(&acts, &w, &mut g).unwrap();
            (value, g)
        };
        let err = grad_check(loss, net.params(), 200, &mut r);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = Net::new(
            mlp_specs(&[4, 9, 2], Activation::Tanh, Activation::Tanh),
            &mut rng(7),
        );
        let x = vec![0.3, -0.2, 0.9, 0.05];
        let acts = net.forward(&x, 1).unwrap();
        let mut g = vec![0.0; net.param_count()];
        let dx = net.backward(&acts, &[1.0, -2.0], &mut g).unwrap();
        for i in 0..4 {
            let h = 1e-5;
            let mut xp = x.clone();
            xp[i] += h;
            let yp = net.predict(&xp, 1).unwrap();
            xp[i] -= 2.0 * h;
            let ym = net.predict(&xp, 1).unwrap();
            let fd = ((yp[0] - ym[0]) - 2.0 * (yp[1] - ym[1])) / (2.0 * h);
            assert!(relative_error(dx[i], fd) < 1e-6);
        }
    }
}
