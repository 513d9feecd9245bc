use super::{check_start, AdamBudget, Minimum, ObjectiveEvaluation};
use crate::{Error, Result};

/// Projected Adam on `[0, 1]^d`.
///
/// After each step the iterate is clipped into the box, and clipped
/// coordinates lose their momentum. Stops after
/// `max_iterations` steps or once the objective has changed by less than
/// `tolerance` on `stall_iterations` consecutive steps.
pub fn adam_minimize<F>(objective: F, start: &[f64], budget: &AdamBudget) -> Result<Minimum>
where
    F: Fn(&[f64]) -> ObjectiveEvaluation,
{
    check_start(start)?;
    let d = start.len();
    let mut x = start.to_vec();
    let mut eval = objective(&x);
    let Some(mut grad) = eval.gradient.take() else {
        return Err(Error::InvalidConfig("adam needs an objective with gradients".into()));
    };
    if !eval.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("objective {} at the start point", eval.value)));
    }
    let mut best = Minimum {
        point: x.clone(),
        value: eval.value,
        iterations: 0,
    };
    let (mut m, mut v) = (vec![0.0; d], vec![0.0; d]);
    let mut previous = eval.value;
    let mut stall = 0;
    for t in 1..=budget.max_iterations {
        let c1 = 1.0 - budget.beta1.powi(t as i32);
        let c2 = 1.0 - budget.beta2.powi(t as i32);
        for i in 0..d {
            m[i] = budget.beta1 * m[i] + (1.0 - budget.beta1) * grad[i];
            v[i] = budget.beta2 * v[i] + (1.0 - budget.beta2) * grad[i] * grad[i];
            let step = budget.step_size * (m[i] / c1) / ((v[i] / c2).sqrt() + budget.epsilon);
            let moved = x[i] - step;
            x[i] = moved.clamp(0.0, 1.0);
            if x[i] != moved {
                m[i] = 0.0;
            }
        }
        best.iterations = t;
        let eval = objective(&x);
        let finite_grad = eval.gradient.as_ref().is_some_and(|g| g.iter().all(|v| v.is_finite()));
        if !eval.value.is_finite() || !finite_grad {
            log::debug!("adam stopped at iteration {t}: non-finite objective");
            break;
        }
        if (previous - eval.value).abs() < budget.tolerance {
            stall += 1;
        } else {
            stall = 0;
        }
        previous = eval.value;
        if eval.value < best.value {
            best.value = eval.value;
            best.point.copy_from_slice(&x);
        }
        if stall >= budget.stall_iterations {
            break;
        }
        grad = eval.gradient.expect("checked above");
    }
    Ok(best)
}
