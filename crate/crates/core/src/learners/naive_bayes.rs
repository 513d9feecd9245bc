//! Gaussian naive Bayes.

use serde::{Deserialize, Serialize};

use super::Samples;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NbParams {
    /// Added to every variance, as a fraction of the largest feature variance.
    pub var_smoothing: f64,
}

impl Default for NbParams {
    fn default() -> Self {
        Self { var_smoothing: 1e-9 }
    }
}

impl NbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.var_smoothing > 0.0) {
            return Err(Error::InvalidConfig("var_smoothing must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub count: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    stats: Vec<ClassStats>,
    inputs: usize,
}

impl GaussianNb {
    pub fn new(stats: Vec<ClassStats>, inputs: usize) -> Result<Self> {
        if stats.len() < 2 || stats.iter().all(|s| s.count == 0) {
            return Err(Error::Format(
                "naive Bayes needs two classes and one observation".into(),
            ));
        }
        for s in &stats {
            if s.means.len() != inputs
                || s.variances.len() != inputs
                || (s.count > 0 && s.variances.iter().any(|v| !(*v > 0.0)))
            {
                return Err(Error::Format("naive Bayes class statistics malformed".into()));
            }
        }
        Ok(Self { stats, inputs })
    }

    pub fn stats(&self) -> &[ClassStats] {
        &self.stats
    }

    pub fn input_dim(&self) -> usize {
        self.inputs
    }

    pub fn classes(&self) -> usize {
        self.stats.len()
    }

    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        let total: usize = self.stats.iter().map(|s| s.count).sum();
        let log_joint: Vec<f64> = self
            .stats
            .iter()
            .map(|s| {
                if s.count == 0 {
                    return f64::NEG_INFINITY;
                }
                let prior = (s.count as f64 / total as f64).ln();
                let likelihood: f64 = x
                    .iter()
                    .zip(&s.means)
                    .zip(&s.variances)
                    .map(|((v, m), var)| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - m).powi(2) / var))
                    .sum();
                prior + likelihood
            })
            .collect();
        let max = log_joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = log_joint.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }
}

pub(super) fn train(params: &NbParams, classes: usize, data: &Samples) -> GaussianNb {
    let dims = data.features[0].len();
    let n = data.len() as f64;
    let overall_var = (0..dims)
        .map(|f| {
            let mean = data.features.iter().map(|r| r[f]).sum::<f64>() / n;
            data.features.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n
        })
        .fold(0.0, f64::max);
    let epsilon = params.var_smoothing * if overall_var > 0.0 { overall_var } else { 1.0 };

    let stats = (0..classes)
        .map(|c| {
            let rows: Vec<&Vec<f64>> = data
                .features
                .iter()
                .zip(&data.labels)
                .filter(|(_, &y)| y == c)
                .map(|(r, _)| r)
                .collect();
            if rows.is_empty() {
                return ClassStats {
                    count: 0,
                    means: vec![0.0; dims],
                    variances: vec![1.0; dims],
                };
            }
            let k = rows.len() as f64;
            let means: Vec<f64> = (0..dims).map(|f| rows.iter().map(|r| r[f]).sum::<f64>() / k).collect();
            let variances = (0..dims)
                .map(|f| rows.iter().map(|r| (r[f] - means[f]).powi(2)).sum::<f64>() / k + epsilon)
                .collect();
            ClassStats {
                count: rows.len(),
                means,
                variances,
            }
        })
        .collect();
    GaussianNb { stats, inputs: dims }
}
