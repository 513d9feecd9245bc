use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_start, Minimum, PsoBudget};
use crate::{Error, Result};

/// Particle swarm minimization on `[0, 1]^d`.
///
/// Particle 0 starts exactly at `start`; the rest scatter uniformly within
/// `init_spread` of it. Coordinates outside `mask` stay at their starting
/// values throughout. Deterministic for a fixed `seed`.
pub fn pso_minimize<F>(
    objective: F,
    start: &[f64],
    budget: &PsoBudget,
    mask: Option<&[usize]>,
    seed: u64,
) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    check_start(start)?;
    let d = start.len();
    let free: Vec<usize> = match mask {
        Some(m) => {
            if m.is_empty() {
                return Err(Error::InvalidConfig("feature mask is empty".into()));
            }
            if let Some(&i) = m.iter().find(|&&i| i >= d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: i + 1,
                });
            }
            m.to_vec()
        }
        None => (0..d).collect(),
    };
    let start_value = objective(start);
    if !start_value.is_finite() {
        return Err(Error::NonFinite(format!("objective {start_value} at the start point")));
    }
    let mut best = Minimum {
        point: start.to_vec(),
        value: start_value,
        iterations: 0,
    };
    if budget.max_iterations == 0 {
        return Ok(best);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vmax = budget.max_velocity;
    let mut positions = Vec::with_capacity(budget.particles);
    let mut velocities = Vec::with_capacity(budget.particles);
    let mut personal: Vec<(Vec<f64>, f64)> = Vec::with_capacity(budget.particles);
    for p in 0..budget.particles {
        let mut x = start.to_vec();
        let mut vel = vec![0.0; d];
        for &i in &free {
            if p > 0 && budget.init_spread > 0.0 {
                x[i] = (x[i] + rng.random_range(-budget.init_spread..=budget.init_spread)).clamp(0.0, 1.0);
            }
            vel[i] = rng.random_range(-vmax..=vmax);
        }
        let value = if p == 0 {
            start_value
        } else {
            finite_or_inf(objective(&x))
        };
        if value < best.value {
            best.value = value;
            best.point.copy_from_slice(&x);
        }
        personal.push((x.clone(), value));
        positions.push(x);
        velocities.push(vel);
    }

    let mut stall = 0;
    for t in 1..=budget.max_iterations {
        let before = best.value;
        for p in 0..budget.particles {
            let (x, vel) = (&mut positions[p], &mut velocities[p]);
            for &i in &free {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = budget.inertia * vel[i]
                    + budget.cognitive * r1 * (personal[p].0[i] - x[i])
                    + budget.social * r2 * (best.point[i] - x[i]);
                vel[i] = v.clamp(-vmax, vmax);
                let (next, bounced) = reflect(x[i] + vel[i]);
                x[i] = next;
                if bounced {
                    vel[i] = -vel[i];
                }
            }
            let value = finite_or_inf(objective(x));
            if value < personal[p].1 {
                personal[p].1 = value;
                personal[p].0.copy_from_slice(x);
            }
            if value < best.value {
                best.value = value;
                best.point.copy_from_slice(x);
            }
        }
        best.iterations = t;
        if best.value < before - budget.tolerance {
            stall = 0;
        } else {
            stall += 1;
            if stall >= budget.stall_iterations {
                break;
            }
        }
    }
    Ok(best)
}

/// Mirrors a coordinate that left `[0, 1]` back inside.
fn reflect(v: f64) -> (f64, bool) {
    if v > 1.0 {
        ((2.0 - v).max(0.0), true)
    } else if v < 0.0 {
        ((-v).min(1.0), true)
    } else {
        (v, false)
    }
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}
