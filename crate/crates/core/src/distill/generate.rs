use serde::{Deserialize, Serialize};

use super::{FeatureMask, InstanceRef};
use crate::learners::TrainedModel;
use crate::optimize::{adam_minimize, pso_minimize, AdamBudget, ObjectiveEvaluation, PsoBudget};
use crate::{Error, ProbabilityVector, Result};

/// The prediction a counterfactual should earn from its teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualTarget {
    pub target: ProbabilityVector,
    pub alpha: f64,
    pub source_prediction: ProbabilityVector,
    pub label: usize,
}

/// Blends the teacher's prediction toward the one-hot true label:
/// `y' = f(x) + alpha * (onehot(label) - f(x))`.
pub fn make_target(teacher: &TrainedModel, x: &[f64], label: usize, alpha: f64) -> Result<CounterfactualTarget> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} must lie in [0, 1]")));
    }
    if label >= teacher.labels().len() {
        return Err(Error::InvalidData(format!(
            "label {label} out of range for {} classes",
            teacher.labels().len()
        )));
    }
    let p = teacher.predict_proba(x)?;
    let y = teacher.labels().one_hot(label);
    let blended = p
        .as_slice()
        .iter()
        .zip(&y)
        .map(|(pi, yi)| pi + alpha * (yi - pi))
        .collect();
    Ok(CounterfactualTarget {
        target: ProbabilityVector::new_unchecked(blended),
        alpha,
        source_prediction: p,
        label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub adam: AdamBudget,
    pub pso: PsoBudget,
    /// Largest squared prediction error a converged counterfactual may have.
    pub fit_tolerance: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            adam: AdamBudget::default(),
            pso: PsoBudget::default(),
            fit_tolerance: 1e-2,
        }
    }
}

impl GenerationSettings {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.pso.validate()?;
        if !(self.fit_tolerance > 0.0) {
            return Err(Error::InvalidConfig("fit_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one counterfactual search, in the teacher's feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    pub point: Vec<f64>,
    /// `|f(x') - y'|^2`.
    pub fit: f64,
    /// Manhattan distance to the source instance.
    pub distance: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Minimizes `|x' - x|_1 + lambda * |f(x') - y'|^2` over the unit box.
///
/// Differentiable teachers use Adam, others PSO seeded with `seed`.
/// Coordinates outside `mask` are never changed.
pub fn generate_counterfactual(
    teacher: &TrainedModel,
    x: &[f64],
    target: &CounterfactualTarget,
    lambda: f64,
    mask: Option<&FeatureMask>,
    settings: &GenerationSettings,
    seed: u64,
) -> Result<Counterfactual> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be positive")));
    }
    let y = target.target.as_slice();
    if y.len() != teacher.labels().len() {
        return Err(Error::DimensionMismatch {
            expected: teacher.labels().len(),
            found: y.len(),
        });
    }
    if let Some(m) = mask {
        if let Some(&i) = m.indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: i + 1,
            });
        }
    }
    let fit_of = |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let best = if teacher.is_differentiable() {
        let objective = |z: &[f64]| {
            let evaluated = teacher.gradient(z, |p| {
                let dp = p.iter().zip(y).map(|(a, b)| 2.0 * lambda * (a - b)).collect();
                (lambda * fit_of(p), dp)
            });
            let Ok(Some((fit_term, mut grad))) = evaluated else {
                return ObjectiveEvaluation::value_only(f64::NAN);
            };
            let mut distance = 0.0;
            for (i, g) in grad.iter_mut().enumerate() {
                let diff = z[i] - x[i];
                distance += diff.abs();
                if mask.is_some_and(|m| !m.contains(i)) {
                    *g = 0.0;
                } else if diff != 0.0 {
                    *g += diff.signum();
                }
            }
            ObjectiveEvaluation::new(distance + fit_term, grad)
        };
        adam_minimize(objective, x, &settings.adam)?
    } else {
        let objective = |z: &[f64]| match teacher.predict_proba(z) {
            Ok(p) => super::manhattan(z, x) + lambda * fit_of(p.as_slice()),
            Err(_) => f64::NAN,
        };
        pso_minimize(objective, x, &settings.pso, mask.map(|m| m.indices.as_slice()), seed)?
    };
    let fit = fit_of(teacher.predict_proba(&best.point)?.as_slice());
    Ok(Counterfactual {
        distance: super::manhattan(&best.point, x),
        fit,
        objective: best.value,
        converged: fit <= settings.fit_tolerance,
        point: best.point,
    })
}

/// A labeled virtual instance addressed to a student, in the student's feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualRecord {
    pub teacher: usize,
    pub student: usize,
    pub source: InstanceRef,
    pub features: Vec<f64>,
    pub target: Vec<f64>,
    pub label: usize,
    pub fit: f64,
    pub distance: f64,
    pub converged: bool,
}
