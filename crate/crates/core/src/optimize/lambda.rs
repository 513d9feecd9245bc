use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Candidate balance terms: `start, start*factor, ...` up to `cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaGrid {
    pub start: f64,
    pub factor: f64,
    pub cap: f64,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            start: 1.0,
            factor: 2.0,
            cap: 1024.0,
        }
    }
}

impl LambdaGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.factor > 1.0 && self.cap >= self.start) {
            return Err(Error::InvalidConfig(
                "lambda grid needs start > 0, factor > 1, cap >= start".into(),
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![];
        let mut l = self.start;
        while l <= self.cap * (1.0 + 1e-12) {
            out.push(l);
            l *= self.factor;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// False when no candidate converged and `lambda` is the fallback.
    pub converged: bool,
    /// Every candidate tried, with its outcome.
    pub trials: Vec<(f64, bool)>,
}

/// Doubling search for the largest balance term that still converges.
///
/// Walks the grid upward. Once some candidate converges, the search
/// continues until the first failure after it and returns the last
/// converging value. Candidates that fail before any success are skipped.
/// If nothing converges the grid start is returned, flagged.
pub fn lambda_search<F>(mut converges: F, grid: &LambdaGrid) -> Result<LambdaChoice>
where
    F: FnMut(f64) -> Result<bool>,
{
    grid.validate()?;
    let mut trials = Vec::new();
    let mut last_ok = None;
    for lambda in grid.values() {
        let ok = converges(lambda)?;
        trials.push((lambda, ok));
        match (ok, last_ok) {
            (true, _) => last_ok = Some(lambda),
            (false, Some(_)) => break,
            (false, None) => {}
        }
    }
    Ok(match last_ok {
        Some(lambda) => LambdaChoice {
            lambda,
            converged: true,
            trials,
        },
        None => LambdaChoice {
            lambda: grid.start,
            converged: false,
            trials,
        },
    })
}
