//! Feed-forward networks with manual backpropagation.
//!
//! Models are small dense MLPs over `f64`. `forward` records the
//! post-activation representation of every layer (the "taps") so that
//! auxiliary readouts can attach to intermediate depths; `backward`
//! consumes those taps and produces exact parameter gradients. There is no
//! autodiff graph: each loss knows its own gradient at the logits and the
//! chain rule is applied layer by layer.

pub mod gradcheck;
pub mod loss;

pub use gradcheck::finite_diff_check;
pub use loss::{kd_loss, kd_loss_grad, softmax_probs, LossKind, LossTarget};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the post-activation value.
    /// The relu subgradient at the kink is 0.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `a = act(W x + b)`. Weights are `out x in`, row major.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// A small multilayer perceptron. The last layer is the logit head and uses
/// the identity activation; every earlier layer is a hidden layer.
#[derive(Debug, Clone)]
pub struct MlpModel {
    layers: Vec<Layer>,
    freeze_bias: bool,
}

/// Architecture and init for [`MlpModel::new`].
#[derive(Debug, Clone)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    /// Keep biases pinned at their zero init.
    pub freeze_bias: bool,
}

impl MlpModel {
    /// Seeded init: weights are normal scaled by 1/sqrt(fan_in), biases zero.
    pub fn new(cfg: &MlpConfig, rng: &mut SplitMix64) -> Result<Self> {
        if cfg.hidden.is_empty() {
            return Err(Error::shape(
                "model needs at least one hidden layer so an early tap exists",
            ));
        }
        if cfg.input_dim == 0 || cfg.outputs == 0 || cfg.hidden.contains(&0) {
            return Err(Error::shape("all layer widths must be positive"));
        }
        let mut dims = vec![cfg.input_dim];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(cfg.outputs);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for d in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[d], dims[d + 1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let mut w = DenseMatrix::zeros(fan_out, fan_in);
            for v in w.as_mut_slice() {
                *v = scale * rng.next_normal();
            }
            let activation = if d + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weights: w,
                biases: vec![0.0; fan_out],
                activation,
            });
        }
        Ok(Self {
            layers,
            freeze_bias: cfg.freeze_bias,
        })
    }

    /// Build directly from layers; dimensions must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("model needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.rows() != pair[1].weights.cols() {
                return Err(Error::shape(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].weights.rows(),
                    pair[1].weights.cols()
                )));
            }
        }
        for layer in &layers {
            if layer.biases.len() != layer.weights.rows() {
                return Err(Error::shape("bias length must equal layer output dim"));
            }
        }
        Ok(Self {
            layers,
            freeze_bias: false,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    /// Width of the post-activation representation at 1-based depth `d`.
    pub fn tap_width(&self, d: usize) -> usize {
        self.layers[d - 1].weights.rows()
    }

    /// Forward pass. `taps[d]` is the post-activation representation after
    /// layer `d` (0-based); the final entry equals the logits.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input dim {} does not match model input {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut taps: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut current = x;
        for layer in &self.layers {
            let mut a = layer.weights.matvec(current);
            for (ai, &b) in a.iter_mut().zip(&layer.biases) {
                *ai = layer.activation.apply(*ai + b);
            }
            taps.push(a);
            current = taps.last().unwrap();
        }
        let logits = taps.last().unwrap().clone();
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok((logits, taps))
    }

    /// Backward pass from a gradient at the logits. `taps` must come from a
    /// `forward` call on the same `x`.
    pub fn backward(
        &self,
        x: &[f64],
        taps: &[Vec<f64>],
        loss_grad_at_logits: &[f64],
    ) -> Result<ModelGrads> {
        if taps.len() != self.layers.len() {
            return Err(Error::shape("taps do not match model depth"));
        }
        if loss_grad_at_logits.len() != self.output_dim() {
            return Err(Error::shape("logit gradient has wrong dimension"));
        }
        let mut grads = ModelGrads::zeros_like(self);
        let mut upstream = loss_grad_at_logits.to_vec();
        for d in (0..self.layers.len()).rev() {
            let layer = &self.layers[d];
            let input: &[f64] = if d == 0 { x } else { &taps[d - 1] };
            let output = &taps[d];
            // d_z = upstream * act'(z), act' read off the recorded output.
            let dz: Vec<f64> = upstream
                .iter()
                .zip(output)
                .map(|(&u, &a)| u * layer.activation.grad_from_output(a))
                .collect();
            let dw = &mut grads.d_weights[d];
            for (o, &dzo) in dz.iter().enumerate() {
                let row = dw.row_mut(o);
                for (wi, &xi) in row.iter_mut().zip(input) {
                    *wi += dzo * xi;
                }
                grads.d_biases[d][o] += dzo;
            }
            upstream = layer.weights.matvec_t(&dz);
        }
        grads.d_input = upstream;
        Ok(grads)
    }

    /// `params -= lr * grads`, accumulated grads from one batch.
    pub fn apply_gradients(&mut self, grads: &ModelGrads, lr: f64) {
        for (layer, dw) in self.layers.iter_mut().zip(&grads.d_weights) {
            layer.weights.add_scaled(dw, -lr);
        }
        if !self.freeze_bias {
            for (layer, db) in self.layers.iter_mut().zip(&grads.d_biases) {
                for (b, &d) in layer.biases.iter_mut().zip(db) {
                    *b -= lr * d;
                }
            }
        }
    }

    /// Flatten all parameters (weights then bias, layer by layer).
    pub fn params_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Inverse of [`Self::params_vec`].
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let mut offset = 0;
        for layer in &mut self.layers {
            let wlen = layer.weights.as_slice().len();
            let blen = layer.biases.len();
            if offset + wlen + blen > params.len() {
                return Err(Error::shape("parameter vector too short"));
            }
            layer
                .weights
                .as_mut_slice()
                .copy_from_slice(&params[offset..offset + wlen]);
            offset += wlen;
            layer.biases.copy_from_slice(&params[offset..offset + blen]);
            offset += blen;
        }
        if offset != params.len() {
            return Err(Error::shape("parameter vector too long"));
        }
        Ok(())
    }
}

/// Gradients with the same shapes as the model parameters, plus the
/// gradient with respect to the input.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub d_weights: Vec<DenseMatrix>,
    pub d_biases: Vec<Vec<f64>>,
    pub d_input: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            d_weights: model
                .layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            d_biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
            d_input: vec![0.0; model.input_dim()],
        }
    }

    /// self += scale * other over all parameter gradients.
    pub fn add_scaled(&mut self, other: &ModelGrads, scale: f64) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            a.add_scaled(b, scale);
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.d_weights {
            for v in w.as_mut_slice() {
                *v *= s;
            }
        }
        for b in &mut self.d_biases {
            for v in b {
                *v *= s;
            }
        }
    }
}
