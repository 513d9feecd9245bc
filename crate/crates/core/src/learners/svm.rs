//! Linear SVM (squared hinge, L2 penalty) with logistic calibration of the
//! margin. More than two classes use one-vs-rest machines whose calibrated
//! scores are normalised to sum to one.

use serde::{Deserialize, Serialize};

use super::{binary_proba, sigmoid, Samples};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    /// L2 penalty on the weight vector.
    pub regularization: f64,
    pub max_iterations: usize,
    /// Fit a logistic map on the training margins; otherwise use `sigmoid(margin)`.
    pub calibrate: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            regularization: 1e-2,
            max_iterations: 2000,
            calibrate: true,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "regularization and max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One binary machine: `p = sigmoid(scale * (w.x + bias) + offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub scale: f64,
    pub offset: f64,
}

impl Machine {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.scale * self.margin(x) + self.offset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    /// A single machine for two classes (positive = class 1), else one per class.
    machines: Vec<Machine>,
    classes: usize,
}

impl LinearSvm {
    pub fn new(machines: Vec<Machine>, classes: usize) -> Result<Self> {
        let expected = if classes == 2 { 1 } else { classes };
        if classes < 2 || machines.len() != expected {
            return Err(Error::Format(format!(
                "{classes} classes need {expected} machines, got {}",
                machines.len()
            )));
        }
        let dim = machines[0].weights.len();
        if dim == 0 || machines.iter().any(|m| m.weights.len() != dim) {
            return Err(Error::Format("machine weight vectors disagree in length".into()));
        }
        Ok(Self { machines, classes })
    }

    pub fn machines(&self) -> &[Machine] {
        &self.machines
    }

    pub fn input_dim(&self) -> usize {
        self.machines[0].weights.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        if self.classes == 2 {
            return binary_proba(self.machines[0].score(x));
        }
        let scores: Vec<f64> = self.machines.iter().map(|m| m.score(x)).collect();
        let total: f64 = scores.iter().sum();
        if total <= f64::MIN_POSITIVE {
            return vec![1.0 / self.classes as f64; self.classes];
        }
        scores.into_iter().map(|s| s / total).collect()
    }

    /// Gradient with respect to `x` of a loss whose gradient with respect
    /// to the probabilities `p = proba(x)` is `dp`.
    pub fn input_vjp(&self, x: &[f64], p: &[f64], dp: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let mut add = |m: &Machine, d_score: f64| {
            let s = m.score(x);
            let d_margin = d_score * s * (1.0 - s) * m.scale;
            for (g, w) in grad.iter_mut().zip(&m.weights) {
                *g += d_margin * w;
            }
        };
        if self.classes == 2 {
            add(&self.machines[0], dp[1] - dp[0]);
        } else {
            let scores: Vec<f64> = self.machines.iter().map(|m| m.score(x)).collect();
            let total: f64 = scores.iter().sum();
            if total <= f64::MIN_POSITIVE {
                return grad;
            }
            let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
            for (m, d) in self.machines.iter().zip(dp) {
                add(m, (d - inner) / total);
            }
        }
        grad
    }
}

/// Minimises `reg/2 |w|^2 + mean(max(0, 1 - y (w.x + b))^2)` by accelerated
/// gradient descent. `targets` are +1 / -1.
fn fit_machine(params: &SvmParams, data: &Samples, targets: &[f64]) -> (Vec<f64>, f64) {
    let n = data.len() as f64;
    let d = data.features[0].len();
    let max_norm = data
        .features
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .fold(0.0, f64::max);
    let lipschitz = params.regularization + 2.0 * max_norm;
    let step = 1.0 / lipschitz;

    let objective_grad = |w: &[f64], b: f64| -> (Vec<f64>, f64) {
        let mut gw: Vec<f64> = w.iter().map(|v| params.regularization * v).collect();
        let mut gb = 0.0;
        for (x, &y) in data.features.iter().zip(targets) {
            let margin = w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b;
            let slack = 1.0 - y * margin;
            if slack > 0.0 {
                let c = -2.0 * slack * y / n;
                for (g, v) in gw.iter_mut().zip(x) {
                    *g += c * v;
                }
                gb += c;
            }
        }
        (gw, gb)
    };

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut w_prev, mut b_prev) = (w.clone(), b);
    for k in 0..params.max_iterations {
        let momentum = k as f64 / (k as f64 + 3.0);
        let yw: Vec<f64> = w.iter().zip(&w_prev).map(|(a, p)| a + momentum * (a - p)).collect();
        let yb = b + momentum * (b - b_prev);
        let (gw, gb) = objective_grad(&yw, yb);
        let grad_norm = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        w_prev = std::mem::replace(&mut w, yw.iter().zip(&gw).map(|(a, g)| a - step * g).collect());
        b_prev = b;
        b = yb - step * gb;
        if grad_norm < 1e-20 {
            break;
        }
    }
    (w, b)
}

/// Fits `sigmoid(a m + b)` to 0/1 targets by Newton's method on the
/// log-loss, using smoothed targets so separable data keeps `a` finite.
fn calibrate(margins: &[f64], positive: &[bool]) -> (f64, f64) {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

    let loss = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&t)
            .map(|(m, t)| {
                let z = a * m + b;
                // log(1 + e^z) - t z, computed stably
                let softplus = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                softplus - t * z
            })
            .sum()
    };

    let (mut a, mut b) = (1.0, 0.0);
    let mut current = loss(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (m, t) in margins.iter().zip(&t) {
            let p = sigmoid(a * m + b);
            let r = p - t;
            let w = p * (1.0 - p);
            ga += r * m;
            gb += r;
            haa += w * m * m;
            hab += w * m;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        if det.abs() < 1e-300 {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        let mut shrink = 1.0;
        let mut improved = false;
        while shrink > 1e-10 {
            let (na, nb) = (a - shrink * da, b - shrink * db);
            let l = loss(na, nb);
            if l <= current {
                (a, b) = (na, nb);
                improved = current - l > 1e-12;
                current = l;
                break;
            }
            shrink *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

pub(super) fn train(params: &SvmParams, classes: usize, data: &Samples) -> LinearSvm {
    let positives: Vec<usize> = if classes == 2 { vec![1] } else { (0..classes).collect() };
    let machines = positives
        .into_iter()
        .map(|class| {
            let positive: Vec<bool> = data.labels.iter().map(|&y| y == class).collect();
            let targets: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
            let (weights, bias) = fit_machine(params, data, &targets);
            let mut machine = Machine {
                weights,
                bias,
                scale: 1.0,
                offset: 0.0,
            };
            if params.calibrate {
                let margins: Vec<f64> = data.features.iter().map(|x| machine.margin(x)).collect();
                (machine.scale, machine.offset) = calibrate(&margins, &positive);
            }
            machine
        })
        .collect();
    LinearSvm { machines, classes }
}
