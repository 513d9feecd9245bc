//! Minimizers over the unit box `[0, 1]^d`.
//!
//! [`adam_minimize`] needs gradients; [`pso_minimize`] only needs values.
//! Both track the best point seen, starting point included, so the returned
//! value never exceeds the objective at the start.

mod adam;
mod lambda;
mod pso;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use adam::adam_minimize;
pub use lambda::{lambda_search, LambdaChoice, LambdaGrid};
pub use pso::pso_minimize;

/// Objective value with an optional gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

impl ObjectiveEvaluation {
    pub fn new(value: f64, gradient: Vec<f64>) -> Self {
        Self {
            value,
            gradient: Some(gradient),
        }
    }

    pub fn value_only(value: f64) -> Self {
        Self { value, gradient: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamBudget {
    pub max_iterations: usize,
    /// Minimum improvement of the best value that resets the stall counter.
    pub tolerance: f64,
    /// Consecutive non-improving iterations before stopping.
    pub stall_iterations: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamBudget {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
            stall_iterations: 20,
            step_size: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.stall_iterations == 0 {
            return Err(Error::InvalidConfig(
                "adam tolerance and stall_iterations must be positive".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "adam step_size and epsilon must be positive".into(),
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoBudget {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub stall_iterations: usize,
    pub particles: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Half-width of the initial scatter around the start, per coordinate.
    pub init_spread: f64,
    /// Largest per-coordinate speed.
    pub max_velocity: f64,
}

impl Default for PsoBudget {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
            stall_iterations: 50,
            particles: 40,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            init_spread: 0.25,
            max_velocity: 0.2,
        }
    }
}

impl PsoBudget {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.stall_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(
                "pso particles, stall_iterations and tolerance must be positive".into(),
            ));
        }
        let coefficients = [self.inertia, self.cognitive, self.social, self.init_spread];
        if coefficients.iter().any(|c| !(*c >= 0.0)) || !(self.max_velocity > 0.0) {
            return Err(Error::InvalidConfig("pso coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// Result of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

fn check_start(start: &[f64]) -> Result<()> {
    if start.is_empty() {
        return Err(Error::InvalidData("cannot optimize over zero dimensions".into()));
    }
    if let Some(v) = start.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidData(format!(
            "start point coordinate {v} lies outside [0, 1]"
        )));
    }
    Ok(())
}
