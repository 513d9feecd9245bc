//! Fully connected network: leaky-ReLU hidden layers, a sigmoid output unit
//! for two classes and softmax otherwise. Trained with mini-batch Adam on
//! cross-entropy, early-stopped on a held-out validation split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{binary_proba, sigmoid, softmax, Samples};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden_layers: Vec<usize>,
    pub negative_slope: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of the training rows held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden_layers: vec![32],
            negative_slope: 0.01,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            patience: 10,
            validation_fraction: 0.1,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer sizes must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and patience must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.negative_slope.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation_fraction must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Affine layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// `W^T delta`
    fn back(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (row, d) in self.weights.chunks_exact(self.inputs).zip(delta) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * d;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
    negative_slope: f64,
    classes: usize,
}

/// Intermediate values of one forward pass.
pub struct Trace {
    /// Input to each layer (`activations[0]` is the network input).
    activations: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    proba: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.proba
    }
}

impl Network {
    pub fn new(layers: Vec<Dense>, negative_slope: f64, classes: usize) -> Result<Self> {
        if layers.is_empty() || classes < 2 {
            return Err(Error::Format("network needs a layer and two classes".into()));
        }
        let want_out = output_units(classes);
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0
                || l.weights.len() != l.inputs * l.outputs
                || l.bias.len() != l.outputs
                || (i > 0 && layers[i - 1].outputs != l.inputs)
            {
                return Err(Error::Format(format!("layer {i} has inconsistent shape")));
            }
        }
        if layers.last().map(|l| l.outputs) != Some(want_out) {
            return Err(Error::Format(format!(
                "output layer must have {want_out} units for {classes} classes"
            )));
        }
        Ok(Self {
            layers,
            negative_slope,
            classes,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn negative_slope(&self) -> f64 {
        self.negative_slope
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.negative_slope * z
        }
    }

    fn leaky_grad(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.negative_slope
        }
    }

    fn squash(&self, logits: &[f64]) -> Vec<f64> {
        if self.classes == 2 {
            binary_proba(sigmoid(logits[0]))
        } else {
            softmax(logits)
        }
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut activations = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        let mut logits = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(activations.last().unwrap());
            if i == last {
                logits = z;
            } else {
                activations.push(z.iter().map(|&v| self.leaky(v)).collect());
                pre.push(z);
            }
        }
        let proba = self.squash(&logits);
        Trace {
            activations,
            pre,
            proba,
        }
    }

    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).proba
    }

    /// Gradient of the output logits given the gradient of a loss with
    /// respect to the probabilities.
    fn logit_grad_from_proba(&self, p: &[f64], dp: &[f64]) -> Vec<f64> {
        if self.classes == 2 {
            let s = p[1];
            vec![(dp[1] - dp[0]) * s * (1.0 - s)]
        } else {
            let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
            p.iter().zip(dp).map(|(pk, dk)| pk * (dk - inner)).collect()
        }
    }

    /// Backpropagates a logit gradient, optionally accumulating parameter
    /// gradients, and returns the gradient with respect to the input.
    fn backward(&self, trace: &Trace, mut delta: Vec<f64>, mut grads: Option<&mut [Dense]>) -> Vec<f64> {
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if let Some(g) = grads.as_deref_mut() {
                let input = &trace.activations[i];
                let gl = &mut g[i];
                for (o, d) in delta.iter().enumerate() {
                    gl.bias[o] += d;
                    let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (w, a) in row.iter_mut().zip(input) {
                        *w += d * a;
                    }
                }
            }
            let mut back = layer.back(&delta);
            if i > 0 {
                for (b, &z) in back.iter_mut().zip(&trace.pre[i - 1]) {
                    *b *= self.leaky_grad(z);
                }
            }
            delta = back;
        }
        delta
    }

    /// Vector-Jacobian product: gradient of `L(p(x))` with respect to `x`.
    pub fn input_vjp(&self, trace: &Trace, dp: &[f64]) -> Vec<f64> {
        let delta = self.logit_grad_from_proba(&trace.proba, dp);
        self.backward(trace, delta, None)
    }

    fn cross_entropy(&self, x: &[f64], y: usize) -> f64 {
        let p = self.proba(x);
        -(p[y].max(1e-15)).ln()
    }
}

fn output_units(classes: usize) -> usize {
    if classes == 2 {
        1
    } else {
        classes
    }
}

fn init_network(p: &MlpParams, inputs: usize, classes: usize, rng: &mut ChaCha8Rng) -> Network {
    let mut sizes = vec![inputs];
    sizes.extend(&p.hidden_layers);
    sizes.push(output_units(classes));
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Dense {
                inputs: fan_in,
                outputs: fan_out,
                weights: (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect(),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Network {
        layers,
        negative_slope: p.negative_slope,
        classes,
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(size: usize) -> Self {
        Self {
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &[Dense], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let params = net
            .layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        let gs = grads.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()));
        for (((w, g), m), v) in params.zip(gs).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn zero_like(net: &Network) -> Vec<Dense> {
    net.layers
        .iter()
        .map(|l| Dense {
            inputs: l.inputs,
            outputs: l.outputs,
            weights: vec![0.0; l.weights.len()],
            bias: vec![0.0; l.bias.len()],
        })
        .collect()
}

pub(super) fn train(p: &MlpParams, seed: u64, classes: usize, data: &Samples) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 20 {
        (n as f64 * p.validation_fraction).round() as usize
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let mut net = init_network(p, data.features[0].len(), classes, &mut rng);
    let size = net.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    let mut adam = Adam::new(size);
    let val_loss = |net: &Network| -> f64 {
        val_idx
            .iter()
            .map(|&i| net.cross_entropy(&data.features[i], data.labels[i]))
            .sum::<f64>()
            / val_idx.len() as f64
    };

    let mut best = (f64::INFINITY, net.clone());
    let mut stale = 0;
    for _ in 0..p.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(p.batch_size) {
            let mut grads = zero_like(&net);
            for &i in batch {
                let trace = net.forward_trace(&data.features[i]);
                let y = data.labels[i];
                let delta = if classes == 2 {
                    vec![trace.proba[1] - if y == 1 { 1.0 } else { 0.0 }]
                } else {
                    let mut d = trace.proba.clone();
                    d[y] -= 1.0;
                    d
                };
                net.backward(&trace, delta, Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= scale);
            }
            adam.step(&mut net, &grads, p.learning_rate);
        }
        if n_val > 0 {
            let loss = val_loss(&net);
            if loss < best.0 {
                best = (loss, net.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= p.patience {
                    break;
                }
            }
        }
    }
    if n_val > 0 {
        best.1
    } else {
        net
    }
}
